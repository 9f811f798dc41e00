#pragma once

// Trial batches: config files, concurrent page loads, summaries, reports.

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "h2shard/http_model.hpp"
#include "h2shard/pages.hpp"
#include "h2shard/schedule.hpp"

namespace h2shard {

struct ScheduleRef {
  std::string file;              // sched/v1 file; when set the fields below are ignored
  std::string mode = "quality";  // quality | condition | constant
  std::string class_label = "Good";
  std::string preset;         // synthetic preset; empty picks the mode's default
  std::string distributions;  // dist/v1 file used instead of a preset
  double duration_ms = 60000;
  // constant mode
  double rtt_ms = 100;
  double bandwidth_Bps = INFINITY;
  double loss_rate = 0;
};

struct ExperimentConfig {
  std::string page = "P365x1K";  // preset name
  std::string page_file;         // page/v1 file; overrides `page`
  std::string shard = "none";
  Protocol protocol = Protocol::h2;
  std::size_t h1_conns_per_host = 6;
  std::size_t h2_conns_per_host = 1;
  double dns_latency_ms = 0;
  std::uint32_t icw = 10;
  std::uint32_t tls_rtts = 2;
  ScheduleRef schedule;
  std::size_t trials = 200;
  std::uint64_t base_seed = 1;
  std::size_t workers = 0;  // 0: one per hardware thread

  void validate() const;
};

ExperimentConfig read_experiment_config(std::istream& in);
void write_experiment_config(std::ostream& out, const ExperimentConfig& cfg);

/// Page after sharding, as loaded by every trial.
PageSpec experiment_page(const ExperimentConfig& cfg);
ProtocolConfig experiment_protocol(const ExperimentConfig& cfg);
netsim::SimConfig experiment_sim_config(const ExperimentConfig& cfg);

/// Schedule used by trial `index`. Condition mode resamples with the trial
/// seed; every other mode returns the same schedule for all trials.
class ScheduleSource {
 public:
  explicit ScheduleSource(const ScheduleRef& ref, std::uint64_t base_seed);
  EmulationSchedule for_trial(std::uint64_t seed) const;

 private:
  ScheduleRef ref_;
  std::optional<EmulationSchedule> fixed_;
  MetricDistributions dist_;
  ConditionClass condition_ = ConditionClass::good;
};

struct TrialResult {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  double plt_ms = 0;
  bool converged = true;
  std::size_t connections = 0;
  std::uint64_t retransmissions = 0;
  std::uint64_t wire_bytes = 0;  // payload plus framing written by servers
};

struct SummaryStats {
  std::size_t count = 0;
  double median = 0;
  double p25 = 0;
  double p75 = 0;
  double mean = 0;
  double min = 0;
  double max = 0;
};

/// Nearest-rank quartiles. Throws Error on an empty input.
SummaryStats summarize(std::span<const double> values);

struct TrialSet {
  std::string label;
  ExperimentConfig config;
  std::string page_name;
  std::vector<TrialResult> trials;

  std::vector<double> plts() const;
  SummaryStats summary() const { return summarize(plts()); }
  std::size_t unconverged() const;
};

/// Trial i uses seed base_seed + i. Output is ordered by trial index.
TrialSet run_trials(const ExperimentConfig& cfg);

inline constexpr const char* kTrialSchema = "trials/v1";
void write_trials_csv(std::ostream& out, const TrialSet& set);
void write_trials_json(std::ostream& out, const TrialSet& set);
TrialSet read_trials_json(std::istream& in);

struct Comparison {
  std::size_t from = 0;
  std::size_t to = 0;
  double median_diff_pct = 0;  // (to - from) / from * 100
};

struct Report {
  std::vector<std::string> labels;
  std::vector<SummaryStats> stats;
  std::vector<Comparison> pairs;
  std::vector<std::string> warnings;
};

Report compare(std::span<const TrialSet> sets);
double median_diff_pct(double from, double to);
void write_report_text(std::ostream& out, const Report& report);
void write_report_csv(std::ostream& out, const Report& report);

}  // namespace h2shard
