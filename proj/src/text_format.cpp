#include "h2shard/text_format.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

#include "h2shard/error.hpp"

namespace h2shard::text {

std::string format_double(double value) {
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) throw Error("cannot format number");
  return std::string(buf, end);
}

std::string format_trimmed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, value);
  std::string out(buf);
  if (out.find('.') != std::string::npos) {
    while (!out.empty() && out.back() == '0') out.pop_back();
    if (!out.empty() && out.back() == '.') out.pop_back();
  }
  if (out == "-0") out = "0";
  return out;
}

double parse_double(std::string_view field, std::string_view what) {
  field = trim(field);
  if (field == "inf") return INFINITY;
  double value = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size() || field.empty()) {
    throw Error("invalid " + std::string(what) + " '" + std::string(field) + "'");
  }
  return value;
}

std::int64_t parse_int(std::string_view field, std::string_view what) {
  field = trim(field);
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size() || field.empty()) {
    throw Error("invalid " + std::string(what) + " '" + std::string(field) + "'");
  }
  return value;
}

std::uint64_t parse_uint(std::string_view field, std::string_view what) {
  const auto v = parse_int(field, what);
  if (v < 0) throw Error("negative " + std::string(what) + " '" + std::string(trim(field)) + "'");
  return static_cast<std::uint64_t>(v);
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace h2shard::text
