#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>

namespace lrtabl {

// Flat `key = value` text: one pair per line, `#` starts a comment, values
// may be double-quoted. Section headers are not supported.
class KeyValueConfig {
public:
    static KeyValueConfig parse(const std::string& text, const std::string& source = "<memory>");
    static KeyValueConfig load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    std::optional<std::string> get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
    const std::map<std::string, std::string>& values() const { return values_; }

    // Throws std::invalid_argument naming the first key not in `allowed`.
    void require_known(const std::set<std::string>& allowed) const;

    std::string serialize() const;

private:
    std::map<std::string, std::string> values_;
    std::string source_;
};

// Parses "a..b" (inclusive) or a single integer "a" into a range.
std::pair<std::int64_t, std::int64_t> parse_int_range(std::string_view text);

}  // namespace lrtabl
