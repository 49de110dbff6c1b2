#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "lrtabl/checkpoint.hpp"
#include "lrtabl/cli.hpp"
#include "lrtabl/csv.hpp"

using namespace lrtabl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = 0;
    std::string out;
    std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "lrtabl");
    std::ostringstream out, err;
    Outcome o;
    o.code = cli::run(args, out, err);
    o.out = out.str();
    o.err = err.str();
    return o;
}

using Table = std::vector<std::vector<std::string>>;

Table parse_csv(const std::string& text) {
    Table t;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> row;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) row.push_back(cell);
        t.push_back(row);
    }
    return t;
}

std::string column(const Table& t, std::size_t row, const std::string& name) {
    for (std::size_t c = 0; c < t.front().size(); ++c)
        if (t.front()[c] == name) return t.at(row).at(c);
    throw std::out_of_range("no column " + name);
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("lrtabl_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Small synthetic run: 10 days of 60 events.
std::vector<std::string> synthetic_flags() {
    return {"--synthetic", "--synthetic-events", "60", "--batch-size", "32"};
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

}  // namespace

TEST(Count, StructureCLowRankColumn) {
    const auto r = run_cli({"count", "C", "lowrank", "1..23"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto t = parse_csv(r.out);
    ASSERT_EQ(t.size(), 24u);
    const std::vector<std::string> expected{"1658", "2106", "2554", "2879", "3204", "3504", "3804", "4104",
                                            "4404", "4704", "4984", "5264", "5544", "5824", "6104", "6384",
                                            "6664", "6944", "7224", "7504", "7784", "8064", "8344"};
    for (std::size_t k = 0; k < expected.size(); ++k) {
        EXPECT_EQ(column(t, k + 1, "K"), std::to_string(k + 1));
        EXPECT_EQ(column(t, k + 1, "total_params"), expected[k]);
    }
}

TEST(Count, SingleCells) {
    auto r = run_cli({"count", "A", "full"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(column(parse_csv(r.out), 1, "total_params"), "234");
    r = run_cli({"count", "B", "lowrank", "19"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(column(parse_csv(r.out), 1, "total_params"), "4144");
    r = run_cli({"count", "--structure", "B", "--variant", "lowrank", "--rank", "19"});
    EXPECT_EQ(column(parse_csv(r.out), 1, "total_params"), "4144");
}

TEST(Count, PerLayerBreakdownSumsToTotal) {
    const auto t = parse_csv(run_cli({"count", "B", "lowrank", "1..20"}).out);
    for (std::size_t row = 1; row < t.size(); ++row) {
        EXPECT_EQ(std::stoull(column(t, row, "layer_1")) + std::stoull(column(t, row, "layer_2")),
                  std::stoull(column(t, row, "total_params")));
    }
}

TEST(Count, UsageErrors) {
    auto r = run_cli({"count", "A", "lowrank", "0"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("error: "), std::string::npos);
    r = run_cli({"count", "A", "full", "3"});
    EXPECT_EQ(r.code, 1) << "rank is forbidden with the full variant";
    r = run_cli({"count", "Z"});
    EXPECT_EQ(r.code, 1);
    r = run_cli({"frobnicate"});
    EXPECT_EQ(r.code, 1);
}

TEST(Train, SyntheticHistoryRowsAndArtifacts) {
    const auto dir = scratch("train");
    const auto r = run_cli(concat({"train", "--structure", "A", "--epochs", "10", "--patience", "100", "--out",
                                   dir.string()},
                                  synthetic_flags()));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto history = parse_csv(read_file(dir / "history.csv"));
    EXPECT_EQ(history.size(), 11u);
    EXPECT_EQ(history.front(),
              (std::vector<std::string>{"epoch", "train_loss", "val_acc", "val_p", "val_r", "val_f1"}));
    EXPECT_TRUE(fs::exists(dir / "checkpoint.bin"));
    EXPECT_TRUE(fs::exists(dir / "config.txt"));
    EXPECT_EQ(read_file(dir / "metrics.csv"), r.out);
    for (const auto& e : fs::directory_iterator(dir)) EXPECT_EQ(e.path().extension() == ".tmp", false);
}

TEST(Train, MissingDataPath) {
    const auto r = run_cli({"train", "--structure", "A", "--data", "/nonexistent/lrtabl/data"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("error: data_not_found"), std::string::npos) << r.err;
}

TEST(Train, NoDataSourceAtAll) {
    const char* saved = std::getenv("LRTABL_DATA");
    const std::string keep = saved ? saved : "";
    unsetenv("LRTABL_DATA");
    const auto r = run_cli({"train", "--structure", "A"});
    if (saved) setenv("LRTABL_DATA", keep.c_str(), 1);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("data_not_found"), std::string::npos) << r.err;
}

TEST(Train, SameSeedByteIdenticalMetrics) {
    const auto a = scratch("seed_a");
    const auto b = scratch("seed_b");
    const std::vector<std::string> base{"train", "--structure", "B", "--variant", "lowrank", "--rank", "2",
                                        "--epochs", "3", "--seed", "5"};
    ASSERT_EQ(run_cli(concat(concat(base, {"--out", a.string()}), synthetic_flags())).code, 0);
    ASSERT_EQ(run_cli(concat(concat(base, {"--out", b.string()}), synthetic_flags())).code, 0);
    EXPECT_EQ(read_file(a / "metrics.csv"), read_file(b / "metrics.csv"));
    EXPECT_EQ(read_file(a / "history.csv"), read_file(b / "history.csv"));
    EXPECT_EQ(read_file(a / "checkpoint.bin"), read_file(b / "checkpoint.bin"));
}

TEST(Train, ConfigFileWithFlagOverride) {
    const auto dir = scratch("config");
    atomic_write_file(dir / "run.cfg", "structure = C\nvariant = lowrank\nrank = 4\nepochs = 7\nseed = 3\n");
    const auto r = run_cli(concat({"train", "--config", (dir / "run.cfg").string(), "--epochs", "2", "--out",
                                   dir.string()},
                                  synthetic_flags()));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(parse_csv(read_file(dir / "history.csv")).size(), 3u);
    const auto state = load_checkpoint(dir / "checkpoint.bin");
    EXPECT_EQ(state.net.spec.structure, StructureId::C);
    EXPECT_EQ(state.net.spec.rank, 4u);
    const auto resolved = read_file(dir / "config.txt");
    EXPECT_NE(resolved.find("epochs = 2"), std::string::npos) << resolved;
}

TEST(Eval, ValidationSplitReproducesRecordedMetrics) {
    const auto dir = scratch("eval");
    const auto train = concat({"train", "--structure", "A", "--epochs", "6", "--out", dir.string()}, synthetic_flags());
    ASSERT_EQ(run_cli(train).code, 0);
    const auto r = run_cli(concat({"eval", "--out", dir.string(), "--split", "val"}, synthetic_flags()));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto metrics = parse_csv(r.out);

    const auto state = load_checkpoint(dir / "checkpoint.bin");
    const auto& rec = state.history.at(static_cast<std::size_t>(state.best_epoch - 1));
    EXPECT_NEAR(std::stod(column(metrics, 1, "accuracy")), rec.val.accuracy, 1e-6);
    EXPECT_NEAR(std::stod(column(metrics, 1, "f1")), rec.val.macro_f1, 1e-6);
    EXPECT_NEAR(std::stod(column(metrics, 1, "precision")), rec.val.macro_precision, 1e-6);
    EXPECT_NEAR(std::stod(column(metrics, 1, "recall")), rec.val.macro_recall, 1e-6);
}

TEST(Eval, ConfusionSumsToTestSamples) {
    const auto dir = scratch("eval_cm");
    ASSERT_EQ(run_cli(concat({"train", "--structure", "A", "--epochs", "2", "--out", dir.string()}, synthetic_flags()))
                  .code,
              0);
    const auto r = run_cli(concat({"eval", "--checkpoint", (dir / "checkpoint.bin").string()}, synthetic_flags()));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto t = parse_csv(r.out);
    std::uint64_t sum = 0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) sum += std::stoull(column(t, 1, "cm_" + std::to_string(i) + "_" + std::to_string(j)));
    EXPECT_EQ(sum, std::stoull(column(t, 1, "samples")));
    EXPECT_EQ(sum, 3u * (60u - 9u));
}

TEST(Eval, MismatchedAndBrokenCheckpoints) {
    const auto dir = scratch("eval_bad");
    ASSERT_EQ(run_cli(concat({"train", "--structure", "A", "--epochs", "1", "--out", dir.string()}, synthetic_flags()))
                  .code,
              0);
    auto r = run_cli(concat({"eval", "--out", dir.string(), "--structure", "C"}, synthetic_flags()));
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("spec_mismatch"), std::string::npos) << r.err;

    auto bytes = read_file(dir / "checkpoint.bin");
    bytes[bytes.size() - 3] ^= 0x01;
    atomic_write_file(dir / "checkpoint.bin", bytes);
    r = run_cli(concat({"eval", "--out", dir.string()}, synthetic_flags()));
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("incompatible_checkpoint"), std::string::npos) << r.err;

    r = run_cli(concat({"eval", "--checkpoint", (dir / "missing.bin").string()}, synthetic_flags()));
    EXPECT_EQ(r.code, 2);
}

TEST(Sweep, RowsAndParamsMatchCount) {
    const auto r = run_cli(concat({"sweep", "--structure", "A", "--rank-range", "1..3", "--epochs", "2"},
                                  synthetic_flags()));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto t = parse_csv(r.out);
    ASSERT_EQ(t.size(), 5u);
    EXPECT_EQ(t.front(), (std::vector<std::string>{"K", "acc", "p", "r", "f1", "params"}));
    EXPECT_EQ(column(t, 1, "K"), "full");
    EXPECT_EQ(column(t, 1, "params"), "234");
    const auto counts = parse_csv(run_cli({"count", "A", "lowrank", "1..3"}).out);
    for (std::size_t k = 1; k <= 3; ++k) {
        EXPECT_EQ(column(t, k + 1, "K"), std::to_string(k));
        EXPECT_EQ(column(t, k + 1, "params"), column(counts, k, "total_params"));
    }
}

TEST(Bench, AnalyticFlopsAndLatencyStatistics) {
    const auto r = run_cli({"bench", "--structure", "A", "--variant", "lowrank", "--rank", "1", "--iterations", "200"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto t = parse_csv(r.out);
    std::optional<std::size_t> full_row, lr_row, ratio_row;
    for (std::size_t i = 1; i < t.size(); ++i) {
        if (column(t, i, "layer") != "total") continue;
        const auto v = column(t, i, "variant");
        if (v == "full") full_row = i;
        else if (v == "ratio") ratio_row = i;
        else lr_row = i;
    }
    ASSERT_TRUE(full_row && lr_row && ratio_row) << r.out;

    const auto full = flop_count(structure_spec(StructureId::A, Variant::full, 0).layers[0]);
    EXPECT_EQ(column(t, *full_row, "xbar_flops"), "1200");
    EXPECT_EQ(column(t, *full_row, "e_flops"), "300");
    EXPECT_EQ(column(t, *full_row, "y_flops"), "30");
    EXPECT_EQ(std::stoull(column(t, *full_row, "total_flops")), full.total());
    const auto lr = flop_count(structure_spec(StructureId::A, Variant::lowrank, 1).layers[0]);
    EXPECT_EQ(std::stoull(column(t, *lr_row, "total_flops")), lr.total());
    EXPECT_LT(std::stod(column(t, *ratio_row, "total_flops")), 1.0);

    for (auto row : {*full_row, *lr_row}) {
        const double median = std::stod(column(t, row, "median_ns"));
        const double p95 = std::stod(column(t, row, "p95_ns"));
        EXPECT_GT(median, 0.0);
        EXPECT_GE(p95, median);
    }
}

TEST(Bench, IterationFloor) {
    EXPECT_EQ(run_cli({"bench", "--structure", "A", "--iterations", "10"}).code, 1);
}

TEST(Sweep, StrongSignalF1TrendsUpWithRank) {
    const auto r = run_cli({"sweep", "--structure", "A", "--rank-range", "1..3", "--synthetic"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto t = parse_csv(r.out);
    ASSERT_EQ(t.size(), 5u);
    // Rank order 1, 2, 3, then the full baseline.
    std::vector<double> f1;
    for (std::size_t row : {2, 3, 4, 1}) f1.push_back(std::stod(column(t, row, "f1")));
    EXPECT_GE(f1.back(), f1.front());
    int inversions = 0;
    for (std::size_t i = 1; i < f1.size(); ++i) inversions += f1[i] < f1[i - 1];
    EXPECT_LE(inversions, 1);
    RecordProperty("f1_k1_k2_k3_full", ::testing::PrintToString(f1));
}
