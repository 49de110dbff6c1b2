#include "lrtabl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lrtabl/kvconfig.hpp"
#include "lrtabl/random.hpp"

namespace lrtabl {

void DataLayout::validate() const {
    if (feature_first == 0 || feature_last < feature_first) throw DataError("layout: invalid feature_row_range");
    if (label_first == 0 || label_last < label_first) throw DataError("layout: invalid label_rows");
    if (horizon_index == 0 || horizon_index > label_count()) {
        throw DataError("layout: horizon_index " + std::to_string(horizon_index) + " outside label rows");
    }
    const bool overlap = !(feature_last < label_first || label_last < feature_first);
    if (overlap) throw DataError("layout: feature and label rows overlap");
    if (expected_rows != 0 && (expected_rows < feature_last || expected_rows < label_last)) {
        throw DataError("layout: expected_rows smaller than the declared rows");
    }
}

DataLayout parse_layout(const std::string& text) {
    const auto kv = KeyValueConfig::parse(text, "layout");
    kv.require_known({"feature_row_range", "label_rows", "horizon_index", "expected_rows", "normalize"});
    DataLayout layout;
    if (auto r = kv.get("feature_row_range")) {
        auto [a, b] = parse_int_range(*r);
        layout.feature_first = static_cast<std::size_t>(a);
        layout.feature_last = static_cast<std::size_t>(b);
    }
    if (auto r = kv.get("label_rows")) {
        auto [a, b] = parse_int_range(*r);
        layout.label_first = static_cast<std::size_t>(a);
        layout.label_last = static_cast<std::size_t>(b);
    }
    layout.horizon_index = static_cast<std::size_t>(kv.get_int("horizon_index", 4));
    layout.expected_rows = static_cast<std::size_t>(kv.get_int("expected_rows", 149));
    layout.normalize = kv.get_bool("normalize", false);
    layout.validate();
    return layout;
}

DataLayout load_layout(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open layout file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_layout(ss.str());
}

namespace {

std::vector<std::vector<double>> parse_rows(const std::string& text, const std::string& source) {
    std::vector<std::vector<double>> rows;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::vector<double> row;
        const char* p = line.data();
        const char* end = p + line.size();
        while (p < end) {
            while (p < end && (*p == ' ' || *p == '\t' || *p == ',' || *p == '\r')) ++p;
            if (p == end) break;
            double v = 0;
            auto [next, ec] = std::from_chars(p, end, v);
            if (ec != std::errc{} || (next < end && !(*next == ' ' || *next == '\t' || *next == ',' || *next == '\r'))) {
                throw DataError(source + ":" + std::to_string(lineno) + ": cannot parse number near '" +
                                std::string(p, std::min<std::size_t>(16, static_cast<std::size_t>(end - p))) + "'");
            }
            row.push_back(v);
            p = next;
        }
        if (row.empty()) continue;
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw DataError(source + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(rows.front().size()) + " columns, found " + std::to_string(row.size()));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

// Splits a name into digit and non-digit runs so "day10" sorts after "day9".
bool natural_less(const std::string& a, const std::string& b) {
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        const bool da = std::isdigit(static_cast<unsigned char>(a[i])), db = std::isdigit(static_cast<unsigned char>(b[j]));
        if (da && db) {
            std::size_t ie = i, je = j;
            while (ie < a.size() && std::isdigit(static_cast<unsigned char>(a[ie]))) ++ie;
            while (je < b.size() && std::isdigit(static_cast<unsigned char>(b[je]))) ++je;
            auto na = a.substr(i, ie - i), nb = b.substr(j, je - j);
            na.erase(0, std::min(na.find_first_not_of('0'), na.size()));
            nb.erase(0, std::min(nb.find_first_not_of('0'), nb.size()));
            if (na.size() != nb.size()) return na.size() < nb.size();
            if (na != nb) return na < nb;
            i = ie;
            j = je;
        } else {
            if (a[i] != b[j]) return a[i] < b[j];
            ++i;
            ++j;
        }
    }
    return a.size() - i < b.size() - j;
}

}  // namespace

RawDayMatrix parse_day_text(const std::string& text, const DataLayout& layout, int day_index,
                            const std::string& source) {
    layout.validate();
    const auto rows = parse_rows(text, source);
    if (layout.expected_rows != 0 && rows.size() != layout.expected_rows) {
        throw DataError(source + ": expected " + std::to_string(layout.expected_rows) + " rows, found " +
                        std::to_string(rows.size()));
    }
    if (rows.size() < std::max(layout.feature_last, layout.label_last)) {
        throw DataError(source + ": file has " + std::to_string(rows.size()) + " rows, layout needs " +
                        std::to_string(std::max(layout.feature_last, layout.label_last)));
    }
    const std::size_t events = rows.front().size();
    RawDayMatrix day;
    day.day_index = day_index;
    day.features = Matrix<float>(layout.feature_count(), events);
    for (std::size_t r = 0; r < layout.feature_count(); ++r) {
        const auto& src = rows[layout.feature_first - 1 + r];
        for (std::size_t c = 0; c < events; ++c) {
            if (!std::isfinite(src[c])) {
                throw DataError(source + ": non-finite feature at row " + std::to_string(layout.feature_first + r) +
                                ", column " + std::to_string(c + 1));
            }
            day.features(r, c) = static_cast<float>(src[c]);
        }
    }
    for (std::size_t r = 0; r < layout.label_count(); ++r) {
        const std::size_t file_row = layout.label_first + r;
        const auto& src = rows[file_row - 1];
        std::vector<int> labels(events);
        for (std::size_t c = 0; c < events; ++c) {
            const double v = src[c];
            if (v != 1.0 && v != 2.0 && v != 3.0) {
                std::ostringstream msg;
                msg << source << ": invalid label " << v << " at row " << file_row << ", column " << c + 1
                    << " (expected 1, 2 or 3)";
                throw DataError(msg.str());
            }
            labels[c] = static_cast<int>(v);
        }
        day.labels.push_back(std::move(labels));
    }
    return day;
}

std::vector<RawDayMatrix> load_day_files(std::span<const std::filesystem::path> paths, const DataLayout& layout) {
    std::vector<RawDayMatrix> days;
    int index = 1;
    for (const auto& path : paths) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot open day file " + path.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        days.push_back(parse_day_text(ss.str(), layout, index++, path.string()));
    }
    return days;
}

std::vector<std::filesystem::path> list_day_files(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw DataError("data directory not found: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end(), [](const auto& a, const auto& b) {
        return natural_less(a.filename().string(), b.filename().string());
    });
    return files;
}

std::string format_day_text(const RawDayMatrix& day) {
    std::string out;
    char buf[64];
    for (std::size_t r = 0; r < day.features.rows(); ++r) {
        for (std::size_t c = 0; c < day.features.cols(); ++c) {
            if (c) out += ' ';
            auto [end, ec] = std::to_chars(buf, buf + sizeof buf, day.features(r, c));
            out.append(buf, end);
        }
        out += '\n';
    }
    for (const auto& row : day.labels) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) out += ' ';
            out += std::to_string(row[c]);
        }
        out += '\n';
    }
    return out;
}

ZScoreStats fit_zscore(std::span<const Matrix<float>* const> matrices) {
    if (matrices.empty()) throw DataError("fit_zscore: no data");
    const std::size_t rows = matrices.front()->rows();
    ZScoreStats stats;
    stats.mean.assign(rows, 0.0);
    stats.stddev.assign(rows, 0.0);
    std::size_t count = 0;
    for (const auto* m : matrices) {
        if (m->rows() != rows) throw DataError("fit_zscore: inconsistent feature counts");
        count += m->cols();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < m->cols(); ++c) stats.mean[r] += (*m)(r, c);
    }
    if (count == 0) throw DataError("fit_zscore: no events");
    for (auto& v : stats.mean) v /= static_cast<double>(count);
    for (const auto* m : matrices) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < m->cols(); ++c) {
                const double d = (*m)(r, c) - stats.mean[r];
                stats.stddev[r] += d * d;
            }
    }
    for (std::size_t r = 0; r < rows; ++r) {
        stats.stddev[r] = std::sqrt(stats.stddev[r] / static_cast<double>(count));
        if (!(stats.stddev[r] > 0.0)) stats.constant_rows.push_back(r);
    }
    return stats;
}

Matrix<float> apply_zscore(const ZScoreStats& stats, const Matrix<float>& m) {
    if (m.rows() != stats.mean.size()) throw DataError("apply_zscore: feature count mismatch");
    Matrix<float> out = m;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        if (!(stats.stddev[r] > 0.0)) continue;
        for (std::size_t c = 0; c < m.cols(); ++c) {
            out(r, c) = static_cast<float>((m(r, c) - stats.mean[r]) / stats.stddev[r]);
        }
    }
    return out;
}

Matrix<float> zscore(const std::optional<ZScoreStats>& stats, const Matrix<float>& m) {
    if (stats) return apply_zscore(*stats, m);
    const Matrix<float>* one[] = {&m};
    return apply_zscore(fit_zscore(one), m);
}

std::vector<Sample> make_windows(const RawDayMatrix& day, std::size_t window_len, std::size_t horizon_index) {
    if (horizon_index == 0 || horizon_index > day.labels.size()) {
        throw DataError("horizon index " + std::to_string(horizon_index) + " out of range (day has " +
                        std::to_string(day.labels.size()) + " label rows)");
    }
    if (window_len == 0) throw DataError("window length must be positive");
    const auto& labels = day.labels[horizon_index - 1];
    const std::size_t n = day.events();
    std::vector<Sample> out;
    if (n < window_len) return out;
    out.reserve(n - window_len + 1);
    const std::size_t rows = day.features.rows();
    for (std::size_t end = window_len; end <= n; ++end) {
        Sample s;
        s.window = Matrix<float>(rows, window_len);
        const std::size_t start = end - window_len;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < window_len; ++c) s.window(r, c) = day.features(r, start + c);
        s.label = labels[end - 1] - 1;
        s.day_index = day.day_index;
        out.push_back(std::move(s));
    }
    return out;
}

void Dataset::recount() {
    class_counts.fill(0);
    for (const auto& s : samples) ++class_counts.at(static_cast<std::size_t>(s.label));
}

DatasetPair split_by_day(std::span<const RawDayMatrix> days, const SplitConfig& config) {
    std::vector<int> missing;
    for (int d : config.expected_days) {
        const bool found = std::any_of(days.begin(), days.end(), [&](const auto& day) { return day.day_index == d; });
        if (!found) missing.push_back(d);
    }
    if (!missing.empty()) {
        std::string list;
        for (int d : missing) list += (list.empty() ? "" : ", ") + std::to_string(d);
        throw DataError("missing day indices: " + list);
    }
    DatasetPair out;
    out.train.split = Split::train;
    out.test.split = Split::test;
    for (const auto& day : days) {
        auto windows = make_windows(day, config.window_len, config.horizon_index);
        auto& target = day.day_index <= config.last_train_day ? out.train : out.test;
        std::move(windows.begin(), windows.end(), std::back_inserter(target.samples));
    }
    out.train.recount();
    out.test.recount();
    return out;
}

DatasetPair holdout_tail(const Dataset& data, double fraction) {
    DatasetPair out;
    const auto n = data.samples.size();
    const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction));
    out.train.split = data.split;
    out.test.split = data.split;
    out.train.samples.assign(data.samples.begin(), data.samples.end() - static_cast<std::ptrdiff_t>(n_val));
    out.test.samples.assign(data.samples.end() - static_cast<std::ptrdiff_t>(n_val), data.samples.end());
    out.train.recount();
    out.test.recount();
    return out;
}

DatasetPair prepare_datasets(std::vector<RawDayMatrix> days, const SplitConfig& config, bool normalize,
                             std::vector<std::string>* warnings) {
    if (normalize) {
        std::vector<const Matrix<float>*> train;
        for (const auto& d : days)
            if (d.day_index <= config.last_train_day) train.push_back(&d.features);
        if (train.empty()) throw DataError("no training days to fit normalization on");
        const auto stats = fit_zscore(train);
        if (warnings) {
            for (auto r : stats.constant_rows) {
                warnings->push_back("feature row " + std::to_string(r + 1) + " is constant; left unnormalized");
            }
        }
        for (auto& d : days) d.features = apply_zscore(stats, d.features);
    }
    return split_by_day(days, config);
}

std::vector<RawDayMatrix> synthetic_lob(const SyntheticConfig& config) {
    constexpr std::size_t kFeatures = 40;
    constexpr std::size_t kHorizons = 5;
    constexpr double kPersistence = 0.9;
    constexpr std::array<double, kNumClasses> kClassRates{0.32, 0.36, 0.32};

    Rng rng(config.seed);
    // Per-class sign pattern over the features, and a raw price-like scale.
    std::array<std::array<double, kFeatures>, kNumClasses> pattern{};
    for (auto& p : pattern)
        for (auto& v : p) v = rng.uniform() < 0.5 ? -1.0 : 1.0;
    std::array<double, kFeatures> offset{}, spread{};
    for (std::size_t f = 0; f < kFeatures; ++f) {
        offset[f] = rng.uniform(10.0, 100.0);
        spread[f] = rng.uniform(0.5, 5.0);
    }
    const double innovation = std::sqrt(1.0 - kPersistence * kPersistence);

    std::vector<RawDayMatrix> days;
    for (std::size_t d = 0; d < config.n_days; ++d) {
        RawDayMatrix day;
        day.day_index = static_cast<int>(d + 1);
        day.features = Matrix<float>(kFeatures, config.events_per_day);
        std::vector<int> labels(config.events_per_day);
        std::array<double, kFeatures> state{};
        for (auto& s : state) s = rng.normal();
        for (std::size_t t = 0; t < config.events_per_day; ++t) {
            const double u = rng.uniform();
            int c = 0;
            double acc = kClassRates[0];
            while (c + 1 < static_cast<int>(kNumClasses) && u >= acc) acc += kClassRates[static_cast<std::size_t>(++c)];
            labels[t] = c + 1;
            for (std::size_t f = 0; f < kFeatures; ++f) {
                state[f] = kPersistence * state[f] + innovation * rng.normal();
                const double v = state[f] + config.signal_strength * pattern[static_cast<std::size_t>(c)][f];
                day.features(f, t) = static_cast<float>(offset[f] + spread[f] * v);
            }
        }
        day.labels.assign(kHorizons, labels);
        days.push_back(std::move(day));
    }
    return days;
}

}  // namespace lrtabl
