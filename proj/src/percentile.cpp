#include "h2shard/percentile.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>

#include "h2shard/error.hpp"

namespace h2shard {
namespace {

double normal_score(double u) {
  static const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, u);
}

}  // namespace

double level_fraction(Level level) {
  switch (level) {
    case Level::p10: return 0.10;
    case Level::p25: return 0.25;
    case Level::p50: return 0.50;
    case Level::p75: return 0.75;
    case Level::p90: return 0.90;
  }
  return 0.5;
}

const char* level_name(Level level) {
  switch (level) {
    case Level::p10: return "p10";
    case Level::p25: return "p25";
    case Level::p50: return "p50";
    case Level::p75: return "p75";
    case Level::p90: return "p90";
  }
  return "p50";
}

double nearest_rank(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw Error("percentile of an empty sample");
  if (!(p > 0.0 && p <= 1.0)) throw Error("percentile level outside (0, 1]");
  const auto n = static_cast<double>(sorted.size());
  // The epsilon absorbs products such as 0.1 * 30 landing a hair above 3.
  auto rank = static_cast<std::size_t>(std::ceil(p * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

double nearest_rank_unsorted(std::vector<double> values, double p) {
  std::sort(values.begin(), values.end());
  return nearest_rank(values, p);
}

double PercentileSet::at(Level level) const {
  switch (level) {
    case Level::p10: return p10;
    case Level::p25: return p25;
    case Level::p50: return p50;
    case Level::p75: return p75;
    case Level::p90: return p90;
  }
  return p50;
}

PercentileSet PercentileSet::from_samples(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  return {nearest_rank(values, 0.10), nearest_rank(values, 0.25), nearest_rank(values, 0.50),
          nearest_rank(values, 0.75), nearest_rank(values, 0.90)};
}

PercentileSet PercentileSet::log_normal(double median, double sigma) {
  auto knot = [&](double u) { return median * std::exp(sigma * normal_score(u)); };
  return {knot(0.10), knot(0.25), median, knot(0.75), knot(0.90)};
}

double sample_quantile(const PercentileSet& knots, double u) {
  static const std::array<double, 5> z = {normal_score(0.10), normal_score(0.25), 0.0, normal_score(0.75),
                                          normal_score(0.90)};
  const std::array<double, 5> v = {knots.p10, knots.p25, knots.p50, knots.p75, knots.p90};
  const bool log_space = std::all_of(v.begin(), v.end(), [](double x) { return x > 0; });
  std::array<double, 5> y{};
  for (std::size_t i = 0; i < 5; ++i) y[i] = log_space ? std::log(v[i]) : v[i];

  const double zu = normal_score(std::clamp(u, 0.01, 0.99));
  std::size_t seg = 0;
  if (zu >= z[3]) {
    seg = 3;
  } else if (zu >= z[2]) {
    seg = 2;
  } else if (zu >= z[1]) {
    seg = 1;
  }
  const double t = (zu - z[seg]) / (z[seg + 1] - z[seg]);
  const double out = y[seg] + t * (y[seg + 1] - y[seg]);
  return log_space ? std::exp(out) : std::max(0.0, out);
}

}  // namespace h2shard
