#include "lrtabl/kvconfig.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace lrtabl {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::int64_t to_int(std::string_view s, const std::string& what) {
    std::int64_t v = 0;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc{} || ptr != end) throw std::invalid_argument("invalid integer for " + what + ": '" + std::string(s) + "'");
    return v;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& source) {
    KeyValueConfig cfg;
    cfg.source_ = source;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view view = line;
        bool quoted = false;
        for (std::size_t i = 0; i < view.size(); ++i) {
            if (view[i] == '"') quoted = !quoted;
            if (view[i] == '#' && !quoted) {
                view = view.substr(0, i);
                break;
            }
        }
        view = trim(view);
        if (view.empty()) continue;
        const auto eq = view.find('=');
        if (eq == std::string_view::npos) {
            throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": expected key = value");
        }
        auto key = trim(view.substr(0, eq));
        auto value = trim(view.substr(eq + 1));
        if (key.empty()) throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": empty key");
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        cfg.values_[std::string(key)] = std::string(value);
    }
    return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

std::string KeyValueConfig::get_or(const std::string& key, const std::string& fallback) const {
    return get(key).value_or(fallback);
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    double out = 0;
    const auto* end = v->data() + v->size();
    auto [ptr, ec] = std::from_chars(v->data(), end, out);
    if (ec != std::errc{} || ptr != end) throw std::invalid_argument("invalid number for " + key + ": '" + *v + "'");
    return out;
}

std::int64_t KeyValueConfig::get_int(const std::string& key, std::int64_t fallback) const {
    auto v = get(key);
    return v ? to_int(*v, key) : fallback;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw std::invalid_argument("invalid boolean for " + key + ": '" + *v + "'");
}

void KeyValueConfig::require_known(const std::set<std::string>& allowed) const {
    for (const auto& [k, v] : values_) {
        if (!allowed.count(k)) throw std::invalid_argument(source_ + ": unknown key '" + k + "'");
    }
}

std::string KeyValueConfig::serialize() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
}

std::pair<std::int64_t, std::int64_t> parse_int_range(std::string_view text) {
    text = trim(text);
    const auto dots = text.find("..");
    if (dots == std::string_view::npos) {
        const auto v = to_int(text, "range");
        return {v, v};
    }
    const auto lo = to_int(trim(text.substr(0, dots)), "range start");
    const auto hi = to_int(trim(text.substr(dots + 2)), "range end");
    if (hi < lo) throw std::invalid_argument("empty range '" + std::string(text) + "'");
    return {lo, hi};
}

}  // namespace lrtabl
