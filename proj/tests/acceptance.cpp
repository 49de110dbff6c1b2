// Acceptance checks. Prints one PASS/FAIL (or SKIP) line per criterion and
// exits non-zero if any hard criterion fails.

#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>

#include "lrtabl/checkpoint.hpp"
#include "lrtabl/cli.hpp"
#include "lrtabl/training.hpp"
#include "published_counts.hpp"
#include "test_support.hpp"

using namespace lrtabl;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(bool pass, const std::string& name, const std::string& detail) {
    std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

// Integer expression evaluator: + - * ( ) min(...) over named variables.
class Expr {
public:
    Expr(std::string text, const std::map<std::string, long long>& vars) : s_(std::move(text)), vars_(vars) {}

    long long eval() {
        const long long v = sum();
        skip_ws();
        if (pos_ != s_.size()) throw std::runtime_error("trailing input in '" + s_ + "'");
        return v;
    }

private:
    std::string s_;
    const std::map<std::string, long long>& vars_;
    std::size_t pos_ = 0;

    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }
    bool eat(char c) {
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }
    long long sum() {
        long long v = product();
        for (;;) {
            if (eat('+')) v += product();
            else if (eat('-')) v -= product();
            else return v;
        }
    }
    long long product() {
        long long v = atom();
        while (eat('*')) v *= atom();
        return v;
    }
    long long atom() {
        skip_ws();
        if (eat('(')) {
            const long long v = sum();
            if (!eat(')')) throw std::runtime_error("missing ')'");
            return v;
        }
        if (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
            long long v = 0;
            while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) v = v * 10 + (s_[pos_++] - '0');
            return v;
        }
        std::string name;
        while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_'))
            name += s_[pos_++];
        if (name == "min") {
            if (!eat('(')) throw std::runtime_error("min needs '('");
            long long v = sum();
            while (eat(',')) v = std::min(v, sum());
            if (!eat(')')) throw std::runtime_error("missing ')'");
            return v;
        }
        const auto it = vars_.find(name);
        if (it == vars_.end()) throw std::runtime_error("unknown variable '" + name + "'");
        return it->second;
    }
};

// Time-complexity table, one expression per step, with rank caps written out.
struct FlopFormula {
    const char* xbar;
    const char* e;
    const char* y;
};

FlopFormula flop_formula(LayerKind kind) {
    switch (kind) {
        case LayerKind::BL: return {"Dp*D*T", "0", "Dp*Tp*T"};
        case LayerKind::TABL: return {"Dp*D*T", "Dp*T*T", "Dp*Tp*T"};
        case LayerKind::LRBL: return {"(D+Dp)*min(K,Dp,D)*T", "0", "(T+Tp)*min(K,T,Tp)*Dp + Dp*Tp"};
        case LayerKind::LRTABL:
            return {"(D+Dp)*min(K,Dp,D)*T", "2*Dp*min(K,T,T)*T", "(T+Tp)*min(K,T,Tp)*Dp + Dp*Tp"};
    }
    throw std::logic_error("unknown kind");
}

void check_param_counts() {
    const auto t0 = Clock::now();
    std::size_t ok = 0;
    std::string first_bad;
    const auto cells = testing::published_counts();
    for (const auto& cell : cells) {
        const auto variant = cell.rank == 0 ? Variant::full : Variant::lowrank;
        std::vector<std::size_t> ks;
        if (cell.rank) ks.push_back(cell.rank);
        const auto rows = cli::count_rows(cell.structure, variant, ks);
        if (rows.size() == 1 && rows[0].total == cell.params) {
            ++ok;
        } else if (first_bad.empty()) {
            first_bad = std::string(structure_name(cell.structure)) + " K=" + std::to_string(cell.rank) + " got " +
                        (rows.empty() ? "nothing" : std::to_string(rows[0].total)) + " want " +
                        std::to_string(cell.params);
        }
    }
    const double secs = seconds_since(t0);
    report(ok == cells.size() && secs < 1.0, "param_counts",
           std::to_string(ok) + "/" + std::to_string(cells.size()) + " published cells exact in " + fmt(secs) + " s" +
               (first_bad.empty() ? "" : "; first mismatch " + first_bad));
}

void check_flops() {
    std::size_t layers = 0, mismatches = 0;
    std::string first_bad;
    for (const auto& cell : testing::published_counts()) {
        const auto variant = cell.rank == 0 ? Variant::full : Variant::lowrank;
        const auto spec = structure_spec(cell.structure, variant, cell.rank);
        for (const auto& l : spec.layers) {
            const std::map<std::string, long long> vars{{"D", l.d_in},   {"T", l.t_in},
                                                         {"Dp", l.d_out}, {"Tp", l.t_out},
                                                         {"K", static_cast<long long>(l.rank)}};
            const auto f = flop_formula(l.kind);
            const auto got = flop_count(l);
            const long long want[3] = {Expr(f.xbar, vars).eval(), Expr(f.e, vars).eval(), Expr(f.y, vars).eval()};
            const long long have[3] = {static_cast<long long>(got.xbar), static_cast<long long>(got.e),
                                       static_cast<long long>(got.y)};
            ++layers;
            for (int i = 0; i < 3; ++i) {
                if (want[i] == have[i]) continue;
                ++mismatches;
                if (first_bad.empty()) first_bad = l.to_string() + " step " + std::to_string(i);
            }
        }
    }
    const auto a = flop_count(structure_spec(StructureId::A, Variant::full, 0).layers[0]);
    const bool anchor = a.xbar == 1200 && a.e == 300 && a.y == 30;
    report(mismatches == 0 && anchor, "flop_formulas",
           std::to_string(layers) + " layers over all (structure, K) cells, " + std::to_string(mismatches) +
               " mismatches; TABL A = " + std::to_string(a.xbar) + "/" + std::to_string(a.e) + "/" +
               std::to_string(a.y) + (first_bad.empty() ? "" : "; first mismatch " + first_bad));
}

void check_gradients() {
    const auto t0 = Clock::now();
    double layer_max = 0, net_max = 0;
    std::string worst;
    Rng rng(2024);
    for (auto kind : {LayerKind::BL, LayerKind::TABL, LayerKind::LRBL, LayerKind::LRTABL}) {
        for (auto act : {Activation::identity, Activation::relu}) {
            LayerSpec spec{kind, 4, 5, 3, 2, 2, act, true};
            auto p = init_params<double>(spec, 77);
            for_each_tensor(spec, p, [&](std::string_view, std::span<double> v) {
                for (auto& x : v) x += 0.3 * rng.normal();
            });
            p.lambda = 0.6;
            project_constraints(spec, p);
            const auto r = testing::layer_gradient_check(spec, p, testing::random_matrix<double>(rng, 4, 5), 5);
            if (r.max_rel_error > layer_max) {
                layer_max = r.max_rel_error;
                worst = spec.to_string() + " " + r.worst;
            }
        }
    }
    std::size_t skipped = 0;
    for (std::size_t k : {std::size_t{0}, std::size_t{2}}) {
        auto net = build_structure<double>(StructureId::A, k ? Variant::lowrank : Variant::full, k, 4);
        net.params[0].lambda = 0.7;
        const auto r = testing::network_gradient_check(net, 12 + k);
        net_max = std::max(net_max, r.max_rel_error);
        skipped += r.skipped_kinks;
    }
    const double secs = seconds_since(t0);
    report(layer_max < 1e-5 && net_max < 1e-4 && secs < 60, "gradient_correctness",
           "layer max rel err " + fmt(layer_max) + " (< 1e-5), network A full/K=2 max rel err " + fmt(net_max) +
               " (< 1e-4), " + std::to_string(skipped) + " kink skips, " + fmt(secs) + " s" +
               (layer_max >= 1e-5 ? "; worst " + worst : ""));
}

void check_lowrank_exactness() {
    Rng rng(23);
    const LayerSpec full_spec{LayerKind::TABL, 40, 10, 3, 1, 0, Activation::identity, true};
    double worst = 0;
    for (std::size_t k : {std::size_t{10}, std::size_t{40}}) {
        LayerSpec lr_spec = full_spec;
        lr_spec.kind = LayerKind::LRTABL;
        lr_spec.rank = k;
        const auto full = testing::random_tabl(full_spec, rng);
        const auto lr = testing::exact_factors(lr_spec, full);
        for (int trial = 0; trial < 100; ++trial) {
            const auto x = testing::random_matrix<double>(rng, 40, 10);
            worst = std::max(worst, max_abs_diff(forward(full_spec, full, x).y, forward(lr_spec, lr, x).y));
        }
    }
    report(worst < 1e-10, "lowrank_exactness",
           "max |Y_lr - Y_full| over 2x100 inputs (K=10, K=40) = " + fmt(worst) + " (< 1e-10)");
}

cli::RunConfig synthetic_run(double signal) {
    cli::RunConfig cfg;
    cfg.synthetic = true;
    cfg.synthetic_config.signal_strength = signal;
    return cfg;
}

void check_constraints() {
    const auto data = cli::load_datasets(synthetic_run(3.0));
    std::size_t steps = 0, violations = 0;
    TrainHooks hooks;
    hooks.after_step = [&](const TrainState& st, int, std::size_t) {
        ++steps;
        violations += audit_constraints(st.net);
    };
    TrainConfig cfg;
    cfg.max_epochs = 20;
    cfg.patience = 100;
    cfg.learning_rate = 1e-2;
    int epochs = 0;
    for (auto [id, variant, k] : {std::tuple{StructureId::A, Variant::full, std::size_t{0}},
                                  std::tuple{StructureId::C, Variant::full, std::size_t{0}},
                                  std::tuple{StructureId::C, Variant::lowrank, std::size_t{21}}}) {
        epochs += static_cast<int>(train(build_structure<float>(id, variant, k, 1), data.train, cfg, hooks).history.size());
    }
    report(steps > 0 && violations == 0 && epochs == 60, "constraint_invariants",
           std::to_string(violations) + " violations over " + std::to_string(steps) + " optimizer steps (" +
               std::to_string(epochs) + " epochs across A full, C full, C K=21)");
}

void check_learnability() {
    const auto t0 = Clock::now();
    const auto strong = cli::load_datasets(synthetic_run(3.0));
    const auto strong_acc = evaluate(train(build_structure<float>(StructureId::A, Variant::full, 0, 1), strong.train,
                                           TrainConfig{})
                                         .net,
                                     strong.test)
                                .accuracy;

    const auto null = cli::load_datasets(synthetic_run(0.0));
    const auto null_acc =
        evaluate(train(build_structure<float>(StructureId::A, Variant::full, 0, 1), null.train, TrainConfig{}).net,
                 null.test)
            .accuracy;
    const auto& c = null.test.class_counts;
    const double majority = static_cast<double>(std::max({c[0], c[1], c[2]})) / static_cast<double>(null.test.size());
    const double secs = seconds_since(t0);
    report(strong_acc >= 0.95 && null_acc <= majority + 0.05 && secs < 120, "synthetic_learnability",
           "strong-signal test acc " + fmt(strong_acc) + " (>= 0.95), zero-signal test acc " + fmt(null_acc) +
               " vs majority " + fmt(majority) + " (<= +0.05), " + fmt(secs) + " s");
}

void check_fi2010() {
    const char* dir = std::getenv("LRTABL_DATA");
    if (!dir || !std::getenv("LRTABL_EXTENDED")) {
        std::printf("SKIP fi2010_accuracy: extended check; set LRTABL_DATA and LRTABL_EXTENDED=1 to run "
                    "(reported, not a hard failure)\n");
        return;
    }
    cli::RunConfig cfg;
    cfg.data_dir = dir;
    if (const char* layout = std::getenv("LRTABL_LAYOUT")) cfg.layout_file = layout;
    const auto data = cli::load_datasets(cfg);
    auto f1_at = [&](std::size_t k) {
        TrainConfig tc;
        const auto r = train(build_structure<float>(StructureId::C, Variant::lowrank, k, tc.seed), data.train, tc);
        return evaluate(r.net, data.test).macro_f1;
    };
    const double f1_21 = f1_at(21);
    const double f1_1 = f1_at(1);
    const bool pass = std::abs(f1_21 - 0.763) <= 0.10 && f1_21 - f1_1 >= 0.15;
    // Reported only: the training hyperparameters behind the published numbers are unknown.
    std::printf("%s fi2010_accuracy: C K=21 macro-F1 %s (target 0.763 +/- 0.10), K=1 %s, gap %s (>= 0.15); "
                "default TrainConfig, not counted as a hard failure\n",
                pass ? "PASS" : "FAIL", fmt(f1_21).c_str(), fmt(f1_1).c_str(), fmt(f1_21 - f1_1).c_str());
}

void check_determinism() {
    auto run = cli::RunConfig{};
    run.synthetic = true;
    run.synthetic_config.events_per_day = 120;
    const auto data = cli::load_datasets(run);
    TrainConfig cfg;
    cfg.batch_size = 64;
    cfg.max_epochs = 20;
    cfg.patience = 100;
    cfg.seed = 9;

    const auto a = train(build_structure<float>(StructureId::C, Variant::lowrank, 3, cfg.seed), data.train, cfg);
    const auto b = train(build_structure<float>(StructureId::C, Variant::lowrank, 3, cfg.seed), data.train, cfg);
    const bool same_history = history_csv(a.history) == history_csv(b.history);
    const bool same_ckpt = serialize_checkpoint(a.state) == serialize_checkpoint(b.state);

    const auto parts = holdout_tail(data.train, cfg.validation_fraction);
    auto first = start_training(build_structure<float>(StructureId::C, Variant::lowrank, 3, cfg.seed), cfg);
    run_epochs(first, parts.train, parts.test, data.train.class_counts, cfg, 10);
    const auto path = std::filesystem::temp_directory_path() / "lrtabl_acceptance_resume.ckpt";
    save_checkpoint(first, path);
    auto resumed = load_checkpoint(path);
    std::filesystem::remove(path);
    run_epochs(resumed, parts.train, parts.test, data.train.class_counts, cfg, 20);
    const bool resume_exact = serialize_checkpoint(resumed) == serialize_checkpoint(a.state);

    report(same_history && same_ckpt && resume_exact, "determinism_and_resume",
           std::string("identical history CSVs: ") + (same_history ? "yes" : "no") +
               ", identical checkpoints: " + (same_ckpt ? "yes" : "no") +
               ", resume at epoch 10 matches uninterrupted epoch 20: " + (resume_exact ? "yes" : "no"));
}

}  // namespace

int main() {
    const std::pair<const char*, void (*)()> checks[] = {
        {"param_counts", check_param_counts},
        {"flop_formulas", check_flops},
        {"gradient_correctness", check_gradients},
        {"lowrank_exactness", check_lowrank_exactness},
        {"constraint_invariants", check_constraints},
        {"synthetic_learnability", check_learnability},
        {"fi2010_accuracy", check_fi2010},
        {"determinism_and_resume", check_determinism},
    };
    for (const auto& [name, fn] : checks) {
        try {
            fn();
        } catch (const std::exception& e) {
            report(false, name, std::string("exception: ") + e.what());
        }
    }
    return g_failures == 0 ? 0 : 1;
}
