#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace h2shard::text {

// Shortest representation that parses back to the same double.
std::string format_double(double value);

// Fixed number of decimals with trailing zeros (and a bare '.') stripped.
std::string format_trimmed(double value, int decimals);

double parse_double(std::string_view field, std::string_view what);
std::int64_t parse_int(std::string_view field, std::string_view what);
std::uint64_t parse_uint(std::string_view field, std::string_view what);

std::vector<std::string_view> split(std::string_view line, char sep);
std::string_view trim(std::string_view s);

}  // namespace h2shard::text
