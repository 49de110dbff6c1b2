#include "lrtabl/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ostream>

#include "lrtabl/checkpoint.hpp"
#include "lrtabl/csv.hpp"
#include "lrtabl/kvconfig.hpp"

namespace lrtabl::cli {

std::vector<std::size_t> RunConfig::ranks() const {
    std::vector<std::size_t> out;
    if (rank_range) {
        for (auto k = rank_range->first; k <= rank_range->second; ++k) out.push_back(static_cast<std::size_t>(k));
    } else if (rank) {
        out.push_back(*rank);
    }
    return out;
}

void RunConfig::validate() const {
    auto invalid = [](const std::string& msg) { throw CommandError(kExitUsage, "invalid_config", msg); };
    if (rank && rank_range) invalid("--rank and --rank-range are mutually exclusive");
    if (rank_range && rank_range->first < 1) invalid("invalid K: ranks must be >= 1");
    if (rank && *rank < 1) invalid("invalid K: rank must be >= 1");
    if (command != "sweep") {
        if (variant == Variant::full && (rank || rank_range)) invalid("a rank is not allowed with variant=full");
        if (variant == Variant::lowrank && !rank && !rank_range && command != "eval") {
            invalid("invalid K: variant=lowrank requires --rank or --rank-range");
        }
    }
    if (command == "sweep" && !rank_range && !rank) invalid("sweep requires --rank-range");
    if ((command == "train" || command == "bench") && rank_range && rank_range->first != rank_range->second) {
        invalid(command + " takes a single rank");
    }
    if (command == "bench" && iterations < 100) invalid("bench requires at least 100 iterations");
    if (split != "train" && split != "val" && split != "test") invalid("--split must be train, val or test");
    try {
        train.validate();
    } catch (const std::invalid_argument& e) {
        invalid(e.what());
    }
}

std::string RunConfig::serialize() const {
    KeyValueConfig kv;
    kv.set("command", command);
    kv.set("structure", std::string(structure_name(structure)));
    kv.set("variant", std::string(variant_name(variant)));
    if (rank) kv.set("rank", std::to_string(*rank));
    if (rank_range) kv.set("rank_range", std::to_string(rank_range->first) + ".." + std::to_string(rank_range->second));
    if (data_dir) kv.set("data", data_dir->string());
    if (layout_file) kv.set("layout", layout_file->string());
    kv.set("synthetic", synthetic ? "true" : "false");
    if (synthetic) {
        kv.set("synthetic_days", std::to_string(synthetic_config.n_days));
        kv.set("synthetic_events", std::to_string(synthetic_config.events_per_day));
        kv.set("signal_strength", format_real(synthetic_config.signal_strength));
        kv.set("synthetic_seed", std::to_string(synthetic_config.seed));
    }
    kv.set("last_train_day", std::to_string(last_train_day));
    kv.set("seed", std::to_string(train.seed));
    kv.set("optimizer", std::string(optimizer_name(train.optimizer)));
    kv.set("learning_rate", format_real(train.learning_rate));
    kv.set("beta1", format_real(train.beta1));
    kv.set("beta2", format_real(train.beta2));
    kv.set("eps_adam", format_real(train.eps_adam));
    kv.set("batch_size", std::to_string(train.batch_size));
    kv.set("epochs", std::to_string(train.max_epochs));
    kv.set("patience", std::to_string(train.patience));
    kv.set("shuffle", train.shuffle ? "true" : "false");
    kv.set("validation_fraction", format_real(train.validation_fraction));
    return kv.serialize();
}

std::vector<CountRow> count_rows(StructureId structure, Variant variant, const std::vector<std::size_t>& ranks) {
    std::vector<CountRow> rows;
    auto make = [&](std::size_t k) {
        const auto spec = structure_spec(structure, variant, k);
        CountRow row;
        row.k = variant == Variant::full ? "full" : std::to_string(k);
        for (const auto& l : spec.layers) row.per_layer.push_back(param_count(l));
        row.total = network_param_count(spec);
        rows.push_back(std::move(row));
    };
    if (variant == Variant::full) {
        make(0);
    } else {
        if (ranks.empty()) throw CommandError(kExitUsage, "invalid_config", "invalid K: no rank given");
        for (auto k : ranks) {
            if (k < 1) throw CommandError(kExitUsage, "invalid_config", "invalid K: " + std::to_string(k));
            make(k);
        }
    }
    return rows;
}

std::string count_csv(const std::vector<CountRow>& rows) {
    std::vector<std::string> header{"K", "total_params"};
    const std::size_t n_layers = rows.empty() ? 0 : rows.front().per_layer.size();
    for (std::size_t i = 0; i < n_layers; ++i) header.push_back("layer_" + std::to_string(i + 1));
    CsvWriter csv(header);
    for (const auto& r : rows) {
        std::vector<std::string> f{r.k, std::to_string(r.total)};
        for (auto v : r.per_layer) f.push_back(std::to_string(v));
        csv.row(f);
    }
    return csv.str();
}

std::string metrics_csv(const std::string& split, const Metrics& m) {
    std::vector<std::string> header{"split", "samples", "accuracy", "precision", "recall", "f1",
                                    "f1_up", "f1_stationary", "f1_down"};
    for (std::size_t i = 0; i < kNumClasses; ++i)
        for (std::size_t j = 0; j < kNumClasses; ++j) header.push_back("cm_" + std::to_string(i) + "_" + std::to_string(j));
    CsvWriter csv(header);
    std::vector<std::string> f{split, std::to_string(m.total()), format_real(m.accuracy),
                               format_real(m.macro_precision), format_real(m.macro_recall), format_real(m.macro_f1),
                               format_real(m.f1[0]), format_real(m.f1[1]), format_real(m.f1[2])};
    for (const auto& row : m.confusion)
        for (auto c : row) f.push_back(std::to_string(c));
    csv.row(f);
    return csv.str();
}

namespace {

LatencyStats measure_latency(const Network<float>& net, std::size_t iterations, std::uint64_t seed) {
    Rng rng(seed);
    const auto& in = net.spec.layers.front();
    std::vector<Matrix<float>> inputs(16, Matrix<float>(in.d_in, in.t_in));
    for (auto& m : inputs)
        for (auto& v : m.values()) v = static_cast<float>(rng.normal());

    const std::size_t warmup = std::min<std::size_t>(1000, iterations / 10 + 1);
    float sink = 0;
    for (std::size_t i = 0; i < warmup; ++i) sink += network_forward(net, inputs[i % inputs.size()]).probs[0];

    std::vector<double> ns(iterations);
    for (std::size_t i = 0; i < iterations; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        sink += network_forward(net, inputs[i % inputs.size()]).probs[0];
        const auto t1 = std::chrono::steady_clock::now();
        ns[i] = static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
    }
    if (!std::isfinite(sink)) throw NumericalError("benchmark produced non-finite output");
    std::sort(ns.begin(), ns.end());
    LatencyStats s;
    s.iterations = iterations;
    s.median_ns = iterations % 2 ? ns[iterations / 2] : 0.5 * (ns[iterations / 2 - 1] + ns[iterations / 2]);
    const auto p95 = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(iterations))) - 1;
    s.p95_ns = ns[std::min(p95, iterations - 1)];
    // Clock granularity can round very fast inferences down to zero.
    s.median_ns = std::max(s.median_ns, 1.0);
    s.p95_ns = std::max(s.p95_ns, s.median_ns);
    return s;
}

BenchEntry bench_entry(const NetworkSpec& spec, std::size_t iterations, std::uint64_t seed) {
    BenchEntry e;
    e.spec = spec;
    for (const auto& l : spec.layers) {
        const auto f = flop_count(l);
        e.layer_flops.push_back(f);
        e.total_flops.xbar += f.xbar;
        e.total_flops.e += f.e;
        e.total_flops.y += f.y;
    }
    e.params = network_param_count(spec);
    e.latency = measure_latency(build_network<float>(spec, seed), iterations, seed + 1);
    return e;
}

double ratio(double a, double b) { return b != 0 ? a / b : 0.0; }

}  // namespace

BenchReport run_bench(const NetworkSpec& spec, std::size_t iterations, std::uint64_t seed) {
    BenchReport r;
    r.requested = bench_entry(spec, iterations, seed);
    if (spec.variant == Variant::lowrank && spec.structure != StructureId::custom) {
        r.baseline = bench_entry(structure_spec(spec.structure, Variant::full, 0), iterations, seed);
    }
    return r;
}

std::string BenchReport::csv() const {
    CsvWriter csv({"variant", "layer", "kind", "xbar_flops", "e_flops", "y_flops", "total_flops", "params",
                   "median_ns", "p95_ns", "per_1e4_ms"});
    auto emit = [&](const BenchEntry& e) {
        const std::string v(variant_name(e.spec.variant));
        for (std::size_t i = 0; i < e.spec.layers.size(); ++i) {
            const auto& f = e.layer_flops[i];
            csv.row({v, std::to_string(i + 1), std::string(layer_kind_name(e.spec.layers[i].kind)),
                     std::to_string(f.xbar), std::to_string(f.e), std::to_string(f.y), std::to_string(f.total()),
                     std::to_string(param_count(e.spec.layers[i])), "", "", ""});
        }
        const auto& t = e.total_flops;
        csv.row({v, "total", "", std::to_string(t.xbar), std::to_string(t.e), std::to_string(t.y),
                 std::to_string(t.total()), std::to_string(e.params), format_real(e.latency.median_ns),
                 format_real(e.latency.p95_ns), format_real(e.latency.median_ns * 1e4 / 1e6)});
    };
    emit(requested);
    if (baseline) {
        emit(*baseline);
        const auto& a = requested;
        const auto& b = *baseline;
        auto fr = [](std::uint64_t x, std::uint64_t y) { return format_real(ratio(static_cast<double>(x), static_cast<double>(y))); };
        csv.row({"ratio", "total", "", fr(a.total_flops.xbar, b.total_flops.xbar), fr(a.total_flops.e, b.total_flops.e),
                 fr(a.total_flops.y, b.total_flops.y), fr(a.total_flops.total(), b.total_flops.total()),
                 fr(a.params, b.params), format_real(ratio(a.latency.median_ns, b.latency.median_ns)),
                 format_real(ratio(a.latency.p95_ns, b.latency.p95_ns)),
                 format_real(ratio(a.latency.median_ns, b.latency.median_ns))});
    }
    return csv.str();
}

DatasetPair load_datasets(const RunConfig& cfg, std::vector<std::string>* warnings) {
    SplitConfig split;
    split.last_train_day = cfg.last_train_day;
    std::vector<RawDayMatrix> days;
    bool normalize = true;
    try {
        if (cfg.synthetic) {
            days = synthetic_lob(cfg.synthetic_config);
        } else {
            std::optional<std::filesystem::path> dir = cfg.data_dir;
            if (!dir) {
                if (const char* env = std::getenv("LRTABL_DATA"); env && *env) dir = env;
            }
            if (!dir) throw CommandError(kExitData, "data_not_found", "no --data directory, LRTABL_DATA unset, and --synthetic not given");
            if (!std::filesystem::is_directory(*dir)) {
                throw CommandError(kExitData, "data_not_found", "data directory not found: " + dir->string());
            }
            const DataLayout layout = cfg.layout_file ? load_layout(*cfg.layout_file) : DataLayout{};
            split.horizon_index = layout.horizon_index;
            normalize = layout.normalize;
            const auto files = list_day_files(*dir);
            if (files.empty()) throw CommandError(kExitData, "data_not_found", "no day files in " + dir->string());
            days = load_day_files(files, layout);
        }
        split.expected_days.clear();
        for (const auto& d : days) split.expected_days.push_back(d.day_index);
        return prepare_datasets(std::move(days), split, normalize, warnings);
    } catch (const DataError& e) {
        throw CommandError(kExitData, "data_error", e.what());
    }
}

std::vector<SweepRow> run_sweep(const RunConfig& cfg, const DatasetPair& data) {
    std::vector<SweepRow> rows;
    auto run_one = [&](Variant variant, std::size_t k, std::uint64_t seed, std::string label) {
        auto net = build_structure<float>(cfg.structure, variant, k, seed);
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        const auto result = train(std::move(net), data.train, tc);
        SweepRow row;
        row.k = std::move(label);
        row.metrics = evaluate(result.net, data.test);
        row.params = result.net.param_count();
        rows.push_back(row);
    };
    run_one(Variant::full, 0, cfg.train.seed, "full");
    for (auto k : cfg.ranks()) run_one(Variant::lowrank, k, cfg.train.seed + k, std::to_string(k));
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    CsvWriter csv({"K", "acc", "p", "r", "f1", "params"});
    for (const auto& r : rows) {
        csv.row({r.k, format_real(r.metrics.accuracy), format_real(r.metrics.macro_precision),
                 format_real(r.metrics.macro_recall), format_real(r.metrics.macro_f1), std::to_string(r.params)});
    }
    return csv.str();
}

namespace {

// Raw option values before config-file merging.
struct Flags {
    std::string structure, variant, rank, rank_range, data, layout, config, out, checkpoint, split;
    std::string optimizer;
    std::int64_t seed = -1;
    std::int64_t epochs = -1;
    std::int64_t batch_size = -1;
    std::int64_t patience = -1;
    std::int64_t iterations = -1;
    double learning_rate = -1;
    double signal = -1;
    std::int64_t synthetic_days = -1;
    std::int64_t synthetic_events = -1;
    bool synthetic = false;
    std::vector<std::string> positionals;
};

void add_common(CLI::App* sub, Flags& f) {
    sub->add_option("--structure", f.structure, "Network structure: A, B or C");
    sub->add_option("--variant", f.variant, "full or lowrank");
    sub->add_option("--rank", f.rank, "Rank K of the low-rank layers");
    sub->add_option("--rank-range", f.rank_range, "Inclusive rank range a..b");
    sub->add_option("--data", f.data, "Directory of day files (fallback: LRTABL_DATA)");
    sub->add_option("--layout", f.layout, "Day-file layout config");
    sub->add_option("--config", f.config, "key = value config file; flags override it");
    sub->add_option("--out", f.out, "Output directory");
    sub->add_option("--seed", f.seed, "Random seed");
    sub->add_option("--epochs", f.epochs, "Maximum training epochs");
    sub->add_option("--batch-size", f.batch_size, "Mini-batch size");
    sub->add_option("--patience", f.patience, "Early-stopping patience in epochs");
    sub->add_option("--learning-rate", f.learning_rate, "Optimizer learning rate");
    sub->add_option("--optimizer", f.optimizer, "adam or sgd");
    sub->add_flag("--synthetic", f.synthetic, "Use generated LOB data");
    sub->add_option("--signal", f.signal, "Synthetic class signal strength");
    sub->add_option("--synthetic-days", f.synthetic_days, "Synthetic day count");
    sub->add_option("--synthetic-events", f.synthetic_events, "Synthetic events per day");
}

RunConfig resolve(const std::string& command, const Flags& f) {
    RunConfig cfg;
    cfg.command = command;
    KeyValueConfig kv;
    if (!f.config.empty()) {
        try {
            kv = KeyValueConfig::load(f.config);
        } catch (const std::exception& e) {
            throw CommandError(kExitUsage, "invalid_config", e.what());
        }
    }
    // Flags override the config file.
    auto put = [&](const char* key, const std::string& v) {
        if (!v.empty()) kv.set(key, v);
    };
    auto put_int = [&](const char* key, std::int64_t v) {
        if (v >= 0) kv.set(key, std::to_string(v));
    };
    put("structure", f.structure);
    put("variant", f.variant);
    put("rank", f.rank);
    put("rank_range", f.rank_range);
    put("data", f.data);
    put("layout", f.layout);
    put("out", f.out);
    put("checkpoint", f.checkpoint);
    put("split", f.split);
    put("optimizer", f.optimizer);
    put_int("seed", f.seed);
    put_int("epochs", f.epochs);
    put_int("batch_size", f.batch_size);
    put_int("patience", f.patience);
    put_int("iterations", f.iterations);
    put_int("synthetic_days", f.synthetic_days);
    put_int("synthetic_events", f.synthetic_events);
    if (f.learning_rate > 0) kv.set("learning_rate", format_real(f.learning_rate));
    if (f.signal >= 0) kv.set("signal_strength", format_real(f.signal));
    if (f.synthetic) kv.set("synthetic", "true");

    // count also accepts `count C lowrank 1..23`.
    if (!f.positionals.empty()) kv.set("structure", f.positionals[0]);
    if (f.positionals.size() > 1) kv.set("variant", f.positionals[1]);
    if (f.positionals.size() > 2) kv.set("rank_range", f.positionals[2]);
    if (f.positionals.size() > 3) throw CommandError(kExitUsage, "invalid_config", "too many positional arguments");

    try {
        kv.require_known({"command", "structure", "variant", "rank", "rank_range", "data", "layout", "out",
                          "checkpoint", "split", "optimizer", "seed", "epochs", "batch_size", "patience",
                          "iterations", "synthetic", "synthetic_days", "synthetic_events", "signal_strength",
                          "synthetic_seed", "learning_rate", "beta1", "beta2", "eps_adam", "shuffle",
                          "validation_fraction", "last_train_day"});
        if (auto v = kv.get("structure")) {
            cfg.structure = parse_structure(*v);
            cfg.structure_given = true;
        }
        if (auto v = kv.get("variant")) {
            cfg.variant = parse_variant(*v);
            cfg.variant_given = true;
        }
        if (auto v = kv.get("rank_range")) {
            const auto r = parse_int_range(*v);
            if (r.first == r.second) {
                if (r.first < 1) throw std::invalid_argument("invalid K: " + *v);
                cfg.rank = static_cast<std::size_t>(r.first);
            } else {
                cfg.rank_range = r;
            }
        }
        if (auto v = kv.get("rank")) {
            const auto r = parse_int_range(*v);
            if (r.first != r.second || r.first < 1) throw std::invalid_argument("invalid K: " + *v);
            if (cfg.rank_range) throw std::invalid_argument("--rank and --rank-range are mutually exclusive");
            cfg.rank = static_cast<std::size_t>(r.first);
        }
        if (auto v = kv.get("data")) cfg.data_dir = *v;
        if (auto v = kv.get("layout")) cfg.layout_file = *v;
        if (auto v = kv.get("out")) cfg.out_dir = *v;
        if (auto v = kv.get("checkpoint")) cfg.checkpoint = *v;
        cfg.split = kv.get_or("split", "test");
        cfg.synthetic = kv.get_bool("synthetic", false);
        cfg.synthetic_config.n_days = static_cast<std::size_t>(kv.get_int("synthetic_days", 10));
        cfg.synthetic_config.events_per_day = static_cast<std::size_t>(kv.get_int("synthetic_events", 300));
        cfg.synthetic_config.signal_strength = kv.get_double("signal_strength", 3.0);
        cfg.last_train_day = static_cast<int>(kv.get_int("last_train_day", 7));
        auto& t = cfg.train;
        t.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
        cfg.synthetic_config.seed = static_cast<std::uint64_t>(kv.get_int("synthetic_seed", static_cast<std::int64_t>(t.seed)));
        t.optimizer = parse_optimizer(kv.get_or("optimizer", "adam"));
        t.learning_rate = kv.get_double("learning_rate", t.learning_rate);
        t.beta1 = kv.get_double("beta1", t.beta1);
        t.beta2 = kv.get_double("beta2", t.beta2);
        t.eps_adam = kv.get_double("eps_adam", t.eps_adam);
        t.batch_size = static_cast<std::size_t>(kv.get_int("batch_size", static_cast<std::int64_t>(t.batch_size)));
        t.max_epochs = static_cast<int>(kv.get_int("epochs", t.max_epochs));
        t.patience = static_cast<int>(kv.get_int("patience", t.patience));
        t.shuffle = kv.get_bool("shuffle", t.shuffle);
        t.validation_fraction = kv.get_double("validation_fraction", t.validation_fraction);
        cfg.iterations = static_cast<std::size_t>(kv.get_int("iterations", 10000));
    } catch (const CommandError&) {
        throw;
    } catch (const std::exception& e) {
        throw CommandError(kExitUsage, "invalid_config", e.what());
    }
    if (command == "sweep") cfg.variant = Variant::lowrank;
    cfg.validate();
    return cfg;
}

void write_output(const RunConfig& cfg, const std::string& name, const std::string& contents) {
    if (cfg.out_dir) atomic_write_file(*cfg.out_dir / name, contents);
}

int cmd_count(const RunConfig& cfg, std::ostream& out) {
    const auto csv = count_csv(count_rows(cfg.structure, cfg.variant, cfg.ranks()));
    out << csv;
    write_output(cfg, "count.csv", csv);
    return kExitOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    std::vector<std::string> warnings;
    const auto data = load_datasets(cfg, &warnings);
    for (const auto& w : warnings) err << "warning: " << w << '\n';
    if (data.train.samples.empty()) throw CommandError(kExitData, "data_error", "training split is empty");
    if (data.test.samples.empty()) throw CommandError(kExitData, "data_error", "test split is empty");

    const auto ks = cfg.ranks();
    auto net = build_structure<float>(cfg.structure, cfg.variant, ks.empty() ? 0 : ks.front(), cfg.train.seed);
    const auto result = train(std::move(net), data.train, cfg.train);
    const auto test_metrics = evaluate(result.net, data.test);

    const auto metrics = metrics_csv("test", test_metrics);
    out << metrics;
    if (cfg.out_dir) {
        write_output(cfg, "config.txt", cfg.serialize());
        write_output(cfg, "history.csv", history_csv(result.history));
        write_output(cfg, "metrics.csv", metrics);
        save_checkpoint(result.state, *cfg.out_dir / "checkpoint.bin");
    }
    return kExitOk;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
    std::filesystem::path ckpt_path;
    if (cfg.checkpoint) ckpt_path = *cfg.checkpoint;
    else if (cfg.out_dir) ckpt_path = *cfg.out_dir / "checkpoint.bin";
    else throw CommandError(kExitUsage, "invalid_config", "eval requires --checkpoint or --out");
    if (!std::filesystem::exists(ckpt_path)) {
        throw CommandError(kExitData, "checkpoint_not_found", "checkpoint not found: " + ckpt_path.string());
    }
    TrainState state;
    try {
        state = load_checkpoint(ckpt_path);
    } catch (const CheckpointError& e) {
        throw CommandError(kExitCompat, "incompatible_checkpoint", e.what());
    }
    const auto& spec = state.best.spec;
    if (cfg.structure_given && cfg.structure != spec.structure) {
        throw CommandError(kExitCompat, "spec_mismatch",
                           "checkpoint holds structure " + std::string(structure_name(spec.structure)) +
                               ", requested " + std::string(structure_name(cfg.structure)));
    }
    if (cfg.variant_given && cfg.variant != spec.variant) {
        throw CommandError(kExitCompat, "spec_mismatch",
                           "checkpoint holds variant " + std::string(variant_name(spec.variant)));
    }
    if (cfg.rank && spec.variant == Variant::lowrank && *cfg.rank != spec.rank) {
        throw CommandError(kExitCompat, "spec_mismatch", "checkpoint holds rank " + std::to_string(spec.rank));
    }

    const auto data = load_datasets(cfg);
    const Dataset* target = &data.test;
    DatasetPair parts;
    if (cfg.split == "train") {
        target = &data.train;
    } else if (cfg.split == "val") {
        parts = holdout_tail(data.train, cfg.train.validation_fraction);
        target = &parts.test;
    }
    if (target->samples.empty()) throw CommandError(kExitData, "data_error", cfg.split + " split is empty");
    const auto& w = target->samples.front().window;
    const auto& in = spec.layers.front();
    if (w.rows() != in.d_in || w.cols() != in.t_in) {
        throw CommandError(kExitCompat, "spec_mismatch",
                           "data windows " + w.shape_string() + " do not match checkpoint input (" +
                               std::to_string(in.d_in) + "x" + std::to_string(in.t_in) + ")");
    }
    const auto csv = metrics_csv(cfg.split, evaluate(state.best, *target));
    out << csv;
    write_output(cfg, "eval_" + cfg.split + ".csv", csv);
    return kExitOk;
}

int cmd_sweep(const RunConfig& cfg, std::ostream& out) {
    const auto data = load_datasets(cfg);
    const auto csv = sweep_csv(run_sweep(cfg, data));
    out << csv;
    write_output(cfg, "config.txt", cfg.serialize());
    write_output(cfg, "sweep.csv", csv);
    return kExitOk;
}

int cmd_bench(const RunConfig& cfg, std::ostream& out) {
    const auto ks = cfg.ranks();
    const auto spec = structure_spec(cfg.structure, cfg.variant, ks.empty() ? 0 : ks.front());
    const auto csv = run_bench(spec, cfg.iterations, cfg.train.seed).csv();
    out << csv;
    write_output(cfg, "bench.csv", csv);
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Bilinear networks with low-rank temporal attention for limit order book data", "lrtabl"};
    app.require_subcommand(1);
    Flags f;
    auto* count = app.add_subcommand("count", "Parameter counts per structure and rank");
    auto* train_cmd = app.add_subcommand("train", "Train a network and write checkpoint, history and metrics");
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    auto* sweep = app.add_subcommand("sweep", "Train and evaluate over a rank range");
    auto* bench = app.add_subcommand("bench", "Analytic FLOPs and measured inference latency");
    for (auto* sub : {count, train_cmd, eval, sweep, bench}) add_common(sub, f);
    count->add_option("args", f.positionals, "[structure] [variant] [K or a..b]");
    eval->add_option("--checkpoint", f.checkpoint, "Checkpoint file (default: OUT/checkpoint.bin)");
    eval->add_option("--split", f.split, "train, val or test");
    bench->add_option("--iterations", f.iterations, "Timed inferences (>= 100)");

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return kExitOk;
        }
        err << "error: usage: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        auto* sub = app.get_subcommands().front();
        const std::string name = sub->get_name();
        const RunConfig cfg = resolve(name, f);
        if (name == "count") return cmd_count(cfg, out);
        if (name == "train") return cmd_train(cfg, out, err);
        if (name == "eval") return cmd_eval(cfg, out);
        if (name == "sweep") return cmd_sweep(cfg, out);
        return cmd_bench(cfg, out);
    } catch (const CommandError& e) {
        err << "error: " << e.category() << ": " << e.what() << '\n';
        return e.code();
    } catch (const DivergenceError& e) {
        err << "error: divergence: " << e.what() << '\n';
        return kExitDivergence;
    } catch (const NumericalError& e) {
        err << "error: divergence: " << e.what() << '\n';
        return kExitDivergence;
    } catch (const CheckpointError& e) {
        err << "error: incompatible_checkpoint: " << e.what() << '\n';
        return kExitCompat;
    } catch (const DataError& e) {
        err << "error: data_error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        err << "error: internal: " << e.what() << '\n';
        return kExitUsage;
    }
}

}  // namespace lrtabl::cli
