#pragma once

// Small text helpers shared by the config, checkpoint and CSV writers.
// Doubles are printed in shortest round-trip form so text round trips are exact.

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace texgraph::text {

std::string format_double(double v);
double parse_double(std::string_view s, std::string_view what);
std::size_t parse_size(std::string_view s, std::string_view what);
std::uint64_t parse_u64(std::string_view s, std::string_view what);
bool parse_bool(std::string_view s, std::string_view what);

std::string_view trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

std::vector<std::size_t> parse_size_list(std::string_view s, std::string_view what);
std::vector<double> parse_double_list(std::string_view s, std::string_view what);
std::string join_sizes(const std::vector<std::size_t>& v);
std::string join_doubles(const std::vector<double>& v);

/// Parses "key=value" lines ('#' comments and blank lines ignored). Throws
/// ConfigError on malformed lines or duplicate keys.
std::map<std::string, std::string> parse_key_values(std::string_view content, std::string_view origin);

/// Levenshtein distance, used to suggest the nearest known key.
std::size_t edit_distance(std::string_view a, std::string_view b);
/// Candidate with the smallest edit distance to `key` (first wins on ties).
std::string nearest(std::string_view key, const std::vector<std::string>& candidates);

}  // namespace texgraph::text
