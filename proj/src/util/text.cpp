#include "texgraph/text.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "texgraph/errors.hpp"

namespace texgraph::text {

namespace {

[[noreturn]] void bad_value(std::string_view s, std::string_view what, std::string_view expected) {
    throw ConfigError(std::string(what) + ": expected " + std::string(expected) + ", got '" + std::string(s) + "'");
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view s, std::string_view what) {
    s = trim(s);
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) bad_value(s, what, "a number");
    return v;
}

std::uint64_t parse_u64(std::string_view s, std::string_view what) {
    s = trim(s);
    std::uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        bad_value(s, what, "a non-negative integer");
    }
    return v;
}

std::size_t parse_size(std::string_view s, std::string_view what) {
    return static_cast<std::size_t>(parse_u64(s, what));
}

bool parse_bool(std::string_view s, std::string_view what) {
    s = trim(s);
    if (s == "1" || s == "true" || s == "on" || s == "yes") return true;
    if (s == "0" || s == "false" || s == "off" || s == "no") return false;
    bad_value(s, what, "a boolean");
}

std::string_view trim(std::string_view s) {
    const auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
    while (!s.empty() && ws(s.front())) s.remove_prefix(1);
    while (!s.empty() && ws(s.back())) s.remove_suffix(1);
    return s;
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.emplace_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::vector<std::size_t> parse_size_list(std::string_view s, std::string_view what) {
    std::vector<std::size_t> out;
    for (const auto& part : split(s, ',')) out.push_back(parse_size(part, what));
    return out;
}

std::vector<double> parse_double_list(std::string_view s, std::string_view what) {
    std::vector<double> out;
    for (const auto& part : split(s, ',')) out.push_back(parse_double(part, what));
    return out;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

std::string join_doubles(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += format_double(v[i]);
    }
    return out;
}

std::map<std::string, std::string> parse_key_values(std::string_view content, std::string_view origin) {
    std::map<std::string, std::string> out;
    std::size_t line_no = 0;
    for (const auto& raw : split(content, '\n')) {
        ++line_no;
        std::string_view line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        const std::string where = std::string(origin) + ":" + std::to_string(line_no);
        if (eq == std::string_view::npos) throw ConfigError(where + ": expected key=value, got '" + std::string(line) + "'");
        std::string key(trim(line.substr(0, eq)));
        if (key.empty()) throw ConfigError(where + ": empty key");
        if (out.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
        out.emplace(std::move(key), std::string(trim(line.substr(eq + 1))));
    }
    return out;
}

std::size_t edit_distance(std::string_view a, std::string_view b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

std::string nearest(std::string_view key, const std::vector<std::string>& candidates) {
    std::string best;
    std::size_t best_d = 0;
    for (const auto& c : candidates) {
        const std::size_t d = edit_distance(key, c);
        if (best.empty() || d < best_d) {
            best = c;
            best_d = d;
        }
    }
    return best;
}

}  // namespace texgraph::text
