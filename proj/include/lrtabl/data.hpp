#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrtabl/matrix.hpp"
#include "lrtabl/model.hpp"

namespace lrtabl {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Row layout of a day file. Row numbers are 1-based and inclusive.
struct DataLayout {
    std::size_t feature_first = 1;
    std::size_t feature_last = 40;
    std::size_t label_first = 145;
    std::size_t label_last = 149;
    std::size_t horizon_index = 4;  // 1-based index into the label rows; 4 selects H = 10
    std::size_t expected_rows = 149;  // 0 disables the check
    bool normalize = false;  // fit z-score on the train split when the files hold raw values

    std::size_t feature_count() const { return feature_last - feature_first + 1; }
    std::size_t label_count() const { return label_last - label_first + 1; }
    void validate() const;
};

// Reads key = value lines; unknown keys are rejected.
DataLayout load_layout(const std::filesystem::path& path);
DataLayout parse_layout(const std::string& text);

struct RawDayMatrix {
    Matrix<float> features;               // feature rows x events
    std::vector<std::vector<int>> labels;  // one row per horizon, values in {1,2,3}
    int day_index = 0;

    std::size_t events() const { return features.cols(); }
};

// Parses one text matrix (whitespace or comma separated).
RawDayMatrix parse_day_text(const std::string& text, const DataLayout& layout, int day_index,
                            const std::string& source = "<memory>");

// Day indices follow the order of `paths`, starting at 1.
std::vector<RawDayMatrix> load_day_files(std::span<const std::filesystem::path> paths, const DataLayout& layout);

// Every regular file in `dir`, in natural (digit-aware) name order.
std::vector<std::filesystem::path> list_day_files(const std::filesystem::path& dir);

// Writes features followed by label rows; inverse of parse_day_text for a
// contiguous layout.
std::string format_day_text(const RawDayMatrix& day);

struct ZScoreStats {
    std::vector<double> mean;
    std::vector<double> stddev;
    std::vector<std::size_t> constant_rows;  // rows left untouched because their std is zero
};

ZScoreStats fit_zscore(std::span<const Matrix<float>* const> matrices);
Matrix<float> apply_zscore(const ZScoreStats& stats, const Matrix<float>& m);
// Without stats, fits on `m` itself.
Matrix<float> zscore(const std::optional<ZScoreStats>& stats, const Matrix<float>& m);

struct Sample {
    Matrix<float> window;  // features x window_len
    int label = 0;         // 0 = up, 1 = stationary, 2 = down
    int day_index = 0;
};

inline constexpr std::size_t kWindowLength = 10;

// Stride-1 windows; the window ending at event t carries the label of event t.
std::vector<Sample> make_windows(const RawDayMatrix& day, std::size_t window_len = kWindowLength,
                                 std::size_t horizon_index = 4);

enum class Split { train, test };

struct Dataset {
    std::vector<Sample> samples;
    Split split = Split::train;
    std::array<std::size_t, kNumClasses> class_counts{};

    std::size_t size() const { return samples.size(); }
    void recount();
};

struct SplitConfig {
    std::vector<int> expected_days{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    int last_train_day = 7;
    std::size_t window_len = kWindowLength;
    std::size_t horizon_index = 4;
};

struct DatasetPair {
    Dataset train;
    Dataset test;
};

DatasetPair split_by_day(std::span<const RawDayMatrix> days, const SplitConfig& config = {});

// Splits off the trailing `fraction` of samples as a validation set.
DatasetPair holdout_tail(const Dataset& data, double fraction);

// Full pipeline: optional z-score fit on train days, windowing, day split.
DatasetPair prepare_datasets(std::vector<RawDayMatrix> days, const SplitConfig& config, bool normalize,
                             std::vector<std::string>* warnings = nullptr);

struct SyntheticConfig {
    std::size_t n_days = 10;
    std::size_t events_per_day = 300;
    double signal_strength = 3.0;  // class mean shift in units of the noise std
    std::uint64_t seed = 1;
};

// 40-feature mean-reverting random walks with a label-conditional shift.
std::vector<RawDayMatrix> synthetic_lob(const SyntheticConfig& config);

}  // namespace lrtabl
