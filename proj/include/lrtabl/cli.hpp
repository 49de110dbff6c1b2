#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrtabl/data.hpp"
#include "lrtabl/model.hpp"
#include "lrtabl/training.hpp"

namespace lrtabl::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitCompat = 3;
inline constexpr int kExitDivergence = 4;

// Error carrying an exit code and a machine-parsable category.
class CommandError : public std::runtime_error {
public:
    CommandError(int code, std::string category, const std::string& message)
        : std::runtime_error(message), code_(code), category_(std::move(category)) {}
    int code() const { return code_; }
    const std::string& category() const { return category_; }

private:
    int code_;
    std::string category_;
};

struct RunConfig {
    std::string command;
    StructureId structure = StructureId::A;
    Variant variant = Variant::full;
    std::optional<std::size_t> rank;
    std::optional<std::pair<std::int64_t, std::int64_t>> rank_range;
    std::optional<std::filesystem::path> data_dir;
    std::optional<std::filesystem::path> layout_file;
    std::optional<std::filesystem::path> out_dir;
    std::optional<std::filesystem::path> checkpoint;
    bool synthetic = false;
    SyntheticConfig synthetic_config;
    int last_train_day = 7;
    TrainConfig train;
    std::size_t iterations = 10000;
    std::string split = "test";
    // Flags the user set explicitly on the command line or in a config file.
    bool structure_given = false;
    bool variant_given = false;

    // The effective rank list for count/sweep: the range, the single rank,
    // or empty for the full variant.
    std::vector<std::size_t> ranks() const;
    void validate() const;
    std::string serialize() const;
};

struct CountRow {
    std::string k;  // "full" for the full variant
    std::uint64_t total = 0;
    std::vector<std::uint64_t> per_layer;
};

std::vector<CountRow> count_rows(StructureId structure, Variant variant, const std::vector<std::size_t>& ranks);
std::string count_csv(const std::vector<CountRow>& rows);

std::string metrics_csv(const std::string& split, const Metrics& m);

struct LatencyStats {
    double median_ns = 0;
    double p95_ns = 0;
    std::size_t iterations = 0;
};

struct BenchEntry {
    NetworkSpec spec;
    std::vector<FlopCounts> layer_flops;
    FlopCounts total_flops;
    std::uint64_t params = 0;
    LatencyStats latency;
};

struct BenchReport {
    BenchEntry requested;
    std::optional<BenchEntry> baseline;  // full variant, when the request is low-rank
    std::string csv() const;
};

BenchReport run_bench(const NetworkSpec& spec, std::size_t iterations, std::uint64_t seed);

struct SweepRow {
    std::string k;
    Metrics metrics;
    std::uint64_t params = 0;
};

// Loads or generates the data described by the config and applies the split.
DatasetPair load_datasets(const RunConfig& cfg, std::vector<std::string>* warnings = nullptr);

std::vector<SweepRow> run_sweep(const RunConfig& cfg, const DatasetPair& data);
std::string sweep_csv(const std::vector<SweepRow>& rows);

// Parses argv (argv[0] is the program name) and runs the command. Output
// CSVs go to `out`; diagnostics and the one-line error go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lrtabl::cli
