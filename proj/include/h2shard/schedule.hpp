#pragma once

// Per-epoch link emulation schedules built from metric distributions.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "h2shard/characterize.hpp"

namespace h2shard {

struct LinkEpoch {
  std::size_t index = 0;
  double duration_ms = kWindowMs;
  double loss_rate = 0;  // drop probability, non-zero only while loss_active
  bool loss_active = false;
  double one_way_delay_ms = 35;
  double bandwidth_Bps = 1e6;  // may be +inf for an unconstrained link

  friend bool operator==(const LinkEpoch&, const LinkEpoch&) = default;
};

enum class ScheduleMode { quality, condition };
const char* to_string(ScheduleMode mode);
ScheduleMode parse_schedule_mode(std::string_view name);

struct EmulationSchedule {
  std::vector<LinkEpoch> epochs;
  ScheduleMode mode = ScheduleMode::quality;
  std::string class_label;
  std::uint64_t seed = 0;
  std::string source;
  // Gap draws before quantization to whole epochs. Diagnostic only; not
  // part of the file format.
  std::vector<double> sampled_gaps_ms;

  double duration_ms() const;
  /// Throws Error on a broken epoch invariant.
  void validate() const;
};

/// Constant-parameter schedule, handy for oracles and lossless baselines.
EmulationSchedule constant_schedule(double rtt_ms, double bandwidth_Bps, double loss_rate, std::size_t epochs = 1);

/// Percentile picked per metric for a quality class:
/// retx rate, time gap, throughput, RTT.
struct QualityLevels {
  Level retx_rate;
  Level gap;
  Level throughput;
  Level rtt;
};
QualityLevels quality_levels(QualityClass q);

struct QualityPick {
  double retx_rate = 0;
  double gap_ms = 0;
  double throughput_Bps = 0;
  double ack_rtt_ms = 0;
};
QualityPick quality_pick(const MetricDistributions& dist, QualityClass q, std::size_t window_index);

/// Whole epochs between consecutive loss events: gap rounded to the nearest
/// epoch, never below one.
std::size_t gap_epochs(double gap_ms, double epoch_ms = kWindowMs);

EmulationSchedule quality_schedule(const MetricDistributions& dist, QualityClass q, double duration_ms,
                                   std::uint64_t seed, std::string source = {});

/// `dist` must already be restricted to class `c`; it is sampled, seeded.
EmulationSchedule condition_schedule(const MetricDistributions& dist, ConditionClass c, double duration_ms,
                                     std::uint64_t seed, std::string source = {});

inline constexpr std::array<std::string_view, 4> kSyntheticPresets = {"paper-good", "paper-median", "paper-poor",
                                                                      "paper-quality"};
MetricDistributions synthetic_distributions(std::string_view preset);
/// Preset whose gap distribution represents a condition class.
std::string_view condition_preset(ConditionClass c);

std::string export_netem_script(const EmulationSchedule& schedule, std::string_view device = "eth0");

inline constexpr const char* kScheduleSchema = "sched/v1";
void write_schedule(std::ostream& out, const EmulationSchedule& schedule);
EmulationSchedule read_schedule(std::istream& in);

}  // namespace h2shard
