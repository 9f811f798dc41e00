#pragma once

// Per-window trace characterization: 70 ms slices, retransmission clusters,
// condition classes and percentile distributions over lossy connections.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "h2shard/packet_log.hpp"
#include "h2shard/percentile.hpp"

namespace h2shard {

inline constexpr std::int64_t kWindowUs = 70'000;
inline constexpr double kWindowMs = 70.0;

struct WindowMetrics {
  std::size_t window_index = 0;
  std::uint64_t segments = 0;         // server data segments
  std::uint64_t bytes = 0;            // server payload bytes
  std::uint64_t retransmissions = 0;  // server segments overlapping earlier bytes
  std::optional<double> ack_lapse_ms;

  std::optional<double> retx_rate() const;
  double throughput_Bps(double window_ms = kWindowMs) const { return static_cast<double>(bytes) / (window_ms / 1000.0); }
};

struct ClusterEvent {
  std::size_t window_index = 0;
  double event_time_ms = 0;
  std::uint64_t retransmissions = 0;
  double retx_rate = 0;
};

enum class QualityClass { good, fair, passable, poor };
enum class ConditionClass { good, median, poor };

inline constexpr std::array<QualityClass, 4> kQualityClasses = {QualityClass::good, QualityClass::fair,
                                                                  QualityClass::passable, QualityClass::poor};
inline constexpr std::array<ConditionClass, 3> kConditionClasses = {ConditionClass::good, ConditionClass::median,
                                                                      ConditionClass::poor};

const char* to_string(QualityClass q);
const char* to_string(ConditionClass c);
QualityClass parse_quality_class(std::string_view name);
ConditionClass parse_condition_class(std::string_view name);

/// Condition thresholds on the median inter-cluster gap (half-open intervals).
inline constexpr double kPoorBelowMs = 250.0;
inline constexpr double kGoodFromMs = 750.0;

/// Windows cover [start, last record]; empty trailing windows are omitted,
/// empty interior windows are kept with zero counts.
std::vector<WindowMetrics> slice_windows(const ConnectionTrace& trace, std::int64_t window_us = kWindowUs);

/// One event per window with at least one retransmission, stamped at the
/// window's end.
std::vector<ClusterEvent> detect_clusters(std::span<const WindowMetrics> windows, double window_ms = kWindowMs);

std::vector<double> cluster_gaps_ms(std::span<const ClusterEvent> clusters);

/// Empty optional when fewer than two clusters exist (lossless or single loss).
std::optional<ConditionClass> classify_condition(std::span<const ClusterEvent> clusters);
ConditionClass classify_median_gap(double median_gap_ms);

enum class Metric { retx_rate, gap_ms, throughput_Bps, ack_rtt_ms };
inline constexpr std::array<Metric, 4> kMetrics = {Metric::retx_rate, Metric::gap_ms, Metric::throughput_Bps,
                                                   Metric::ack_rtt_ms};
const char* to_string(Metric m);

struct WindowPercentiles {
  std::size_t window_index = 0;
  std::size_t samples = 0;
  PercentileSet pct;

  friend bool operator==(const WindowPercentiles&, const WindowPercentiles&) = default;
};

struct MetricDistributions {
  // Indexed by Metric; each series ascending by window index, gaps allowed.
  std::array<std::vector<WindowPercentiles>, 4> series;
  std::vector<double> handshake_rtt_ms;  // ascending
  double lossy_fraction = 0;

  const std::vector<WindowPercentiles>& metric(Metric m) const { return series[static_cast<std::size_t>(m)]; }
  std::vector<WindowPercentiles>& metric(Metric m) { return series[static_cast<std::size_t>(m)]; }

  /// One past the largest window index observed in any metric.
  std::size_t horizon() const;
  /// Percentiles for a window index; indices past the horizon cycle from the
  /// start and a window missing from this metric falls back to the nearest
  /// earlier one (or the first entry).
  const PercentileSet& at(Metric m, std::size_t window_index) const;
  bool empty() const;

  friend bool operator==(const MetricDistributions&, const MetricDistributions&) = default;
};

struct TraceAnalysis {
  std::vector<WindowMetrics> windows;
  std::vector<ClusterEvent> clusters;
  std::optional<ConditionClass> condition;
};

TraceAnalysis analyze_trace(const ConnectionTrace& trace);

/// Builds distributions from lossy connections only (at least one cluster).
/// With `only`, connections are further restricted to that condition class.
/// Handshake RTTs come from every trace with a complete handshake.
/// Throws Error("no lossy traces") when nothing qualifies.
MetricDistributions build_distributions(std::span<const ConnectionTrace> traces,
                                        std::optional<ConditionClass> only = std::nullopt);

double lossy_fraction(std::span<const ConnectionTrace> traces);

struct LatencySample {
  double total_retx_rate = 0;
  double min_rtt_ms = 0;
  double max_rtt_ms = 0;
  double avg_rtt_ms = 0;
  double connect_time_ms = 0;
};

/// Pearson r of loss against min, max, avg RTT and connect time, in that
/// order. A constant series yields an empty optional for its pair.
std::array<std::optional<double>, 4> loss_latency_correlation(std::span<const LatencySample> samples);

std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

inline constexpr const char* kDistSchema = "dist/v1";
void write_distributions(std::ostream& out, const MetricDistributions& dist);
MetricDistributions read_distributions(std::istream& in);

}  // namespace h2shard
