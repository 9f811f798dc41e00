#pragma once

#include <array>
#include <span>
#include <vector>

namespace h2shard {

/// Percentile levels reported for every metric.
enum class Level { p10, p25, p50, p75, p90 };

inline constexpr std::array<Level, 5> kLevels = {Level::p10, Level::p25, Level::p50, Level::p75, Level::p90};

double level_fraction(Level level);
const char* level_name(Level level);

/// Nearest-rank percentile: the value at 1-based index ceil(p * n) of the
/// sorted sample. `sorted` must be non-empty and ascending; p in (0, 1].
double nearest_rank(std::span<const double> sorted, double p);

/// Sorts a copy and takes the nearest-rank percentile.
double nearest_rank_unsorted(std::vector<double> values, double p);

struct PercentileSet {
  double p10 = 0;
  double p25 = 0;
  double p50 = 0;
  double p75 = 0;
  double p90 = 0;

  double at(Level level) const;
  bool monotone() const { return p10 <= p25 && p25 <= p50 && p50 <= p75 && p75 <= p90; }

  static PercentileSet from_samples(std::vector<double> values);
  /// All five knots of a log-normal with the given median and log-space sigma.
  static PercentileSet log_normal(double median, double sigma);

  friend bool operator==(const PercentileSet&, const PercentileSet&) = default;
};

/// Inverse-CDF sampling through the five percentile knots. Between knots the
/// quantile function is linear in the normal score (in log space when every
/// knot is positive, which makes log-normal knots exact); beyond p10/p90 the
/// end slopes are extended out to the 1st/99th percentile.
double sample_quantile(const PercentileSet& knots, double u);

}  // namespace h2shard
