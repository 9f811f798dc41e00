#include "h2shard/schedule.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

#include "h2shard/error.hpp"
#include "h2shard/text_format.hpp"

namespace h2shard {
namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double sample_metric(const MetricDistributions& dist, Metric m, std::size_t window, std::mt19937_64& rng) {
  return sample_quantile(dist.at(m, window), uniform01(rng));
}

double sample_handshake(const MetricDistributions& dist, std::mt19937_64& rng) {
  const auto& h = dist.handshake_rtt_ms;
  const auto i = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(h.size()));
  return h[std::min(i, h.size() - 1)];
}

// Log-normal shape of one synthetic metric: median anchor and log-space sigma.
struct Shape {
  double median;
  double sigma;
};

struct PresetShape {
  Shape retx_rate;
  Shape gap_ms;
  Shape throughput_Bps;
  Shape ack_rtt_ms;
};

// Sigma that places the 90th percentile at `p90` for the given median.
double sigma_for_p90(double median, double p90) { return std::log(p90 / median) / 1.2815515655446004; }

constexpr double kRetxTail = 0.40;
constexpr double kHandshakeMedianMs = 70.0;
constexpr double kHandshakeSigma = 0.35;
constexpr std::size_t kHandshakeSamples = 999;
constexpr std::size_t kSyntheticWindows = 30;

PresetShape preset_shape(std::string_view preset) {
  if (preset == "paper-good") {
    return {{0.10, sigma_for_p90(0.10, kRetxTail)}, {1150, 0.35}, {1.2e6, 0.4}, {90, 0.35}};
  }
  if (preset == "paper-median") {
    return {{0.12, sigma_for_p90(0.12, kRetxTail)}, {350, 0.35}, {1.0e6, 0.4}, {80, 0.35}};
  }
  if (preset == "paper-poor") {
    return {{0.15, sigma_for_p90(0.15, kRetxTail)}, {165, 0.35}, {0.8e6, 0.4}, {70, 0.35}};
  }
  if (preset == "paper-quality") {
    return {{0.012, 0.3}, {500, 0.15}, {0.68e6, 0.35}, {70, 0.2}};
  }
  throw Error("unknown distribution preset '" + std::string(preset) + "'");
}

std::string trimmed(double v, int decimals) { return text::format_trimmed(v, decimals); }

}  // namespace

const char* to_string(ScheduleMode mode) { return mode == ScheduleMode::quality ? "quality" : "condition"; }

ScheduleMode parse_schedule_mode(std::string_view name) {
  if (name == "quality") return ScheduleMode::quality;
  if (name == "condition") return ScheduleMode::condition;
  throw Error("unknown schedule mode '" + std::string(name) + "'");
}

double EmulationSchedule::duration_ms() const {
  double total = 0;
  for (const auto& e : epochs) total += e.duration_ms;
  return total;
}

void EmulationSchedule::validate() const {
  if (epochs.empty()) throw Error("schedule has no epochs");
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto& e = epochs[i];
    const auto where = "epoch " + std::to_string(i) + ": ";
    if (e.index != i) throw Error(where + "index out of sequence");
    if (!(e.duration_ms > 0)) throw Error(where + "duration must be positive");
    if (!(e.loss_rate >= 0 && e.loss_rate <= 1)) throw Error(where + "loss_rate outside [0, 1]");
    if (e.loss_rate > 0 && !e.loss_active) throw Error(where + "loss_rate set on an inactive epoch");
    if (!(e.one_way_delay_ms > 0)) throw Error(where + "one_way_delay_ms must be positive");
    if (!(e.bandwidth_Bps > 0)) throw Error(where + "bandwidth_Bps must be positive");
  }
}

EmulationSchedule constant_schedule(double rtt_ms, double bandwidth_Bps, double loss_rate, std::size_t epochs) {
  EmulationSchedule s;
  s.source = "constant";
  s.class_label = "constant";
  for (std::size_t i = 0; i < epochs; ++i) {
    s.epochs.push_back({i, kWindowMs, loss_rate, loss_rate > 0, rtt_ms / 2.0, bandwidth_Bps});
  }
  s.validate();
  return s;
}

QualityLevels quality_levels(QualityClass q) {
  switch (q) {
    case QualityClass::good: return {Level::p10, Level::p90, Level::p90, Level::p10};
    case QualityClass::fair: return {Level::p25, Level::p75, Level::p75, Level::p25};
    case QualityClass::passable: return {Level::p50, Level::p50, Level::p50, Level::p50};
    case QualityClass::poor: return {Level::p75, Level::p25, Level::p25, Level::p75};
  }
  return {Level::p50, Level::p50, Level::p50, Level::p50};
}

QualityPick quality_pick(const MetricDistributions& dist, QualityClass q, std::size_t window_index) {
  const auto lv = quality_levels(q);
  return {dist.at(Metric::retx_rate, window_index).at(lv.retx_rate),
          dist.at(Metric::gap_ms, window_index).at(lv.gap),
          dist.at(Metric::throughput_Bps, window_index).at(lv.throughput),
          dist.at(Metric::ack_rtt_ms, window_index).at(lv.rtt)};
}

std::size_t gap_epochs(double gap_ms, double epoch_ms) {
  const auto n = std::llround(gap_ms / epoch_ms);
  return static_cast<std::size_t>(std::max<long long>(1, n));
}

EmulationSchedule quality_schedule(const MetricDistributions& dist, QualityClass q, double duration_ms,
                                   std::uint64_t seed, std::string source) {
  for (auto m : kMetrics) {
    if (dist.metric(m).empty()) throw Error(std::string("distribution has no samples for ") + to_string(m));
  }
  if (!(duration_ms > 0)) throw Error("schedule duration must be positive");
  EmulationSchedule s;
  s.mode = ScheduleMode::quality;
  s.class_label = to_string(q);
  s.seed = seed;
  s.source = std::move(source);
  const auto n = static_cast<std::size_t>(std::ceil(duration_ms / kWindowMs));

  std::size_t next_active = gap_epochs(quality_pick(dist, q, 0).gap_ms);
  for (std::size_t i = 0; i < n; ++i) {
    const auto pick = quality_pick(dist, q, i);
    LinkEpoch e;
    e.index = i;
    e.one_way_delay_ms = pick.ack_rtt_ms / 2.0;
    e.bandwidth_Bps = pick.throughput_Bps;
    if (i == next_active) {
      e.loss_active = true;
      e.loss_rate = std::clamp(pick.retx_rate, 0.0, 1.0);
      s.sampled_gaps_ms.push_back(pick.gap_ms);
      next_active = i + gap_epochs(pick.gap_ms);
    }
    s.epochs.push_back(e);
  }
  s.validate();
  return s;
}

EmulationSchedule condition_schedule(const MetricDistributions& dist, ConditionClass c, double duration_ms,
                                     std::uint64_t seed, std::string source) {
  for (auto m : {Metric::retx_rate, Metric::gap_ms, Metric::throughput_Bps}) {
    if (dist.metric(m).empty()) throw Error(std::string("class distribution has no samples for ") + to_string(m));
  }
  if (dist.handshake_rtt_ms.empty()) throw Error("class distribution has no handshake RTT samples");
  if (!(duration_ms > 0)) throw Error("schedule duration must be positive");

  EmulationSchedule s;
  s.mode = ScheduleMode::condition;
  s.class_label = to_string(c);
  s.seed = seed;
  s.source = std::move(source);
  const auto n = static_cast<std::size_t>(std::ceil(duration_ms / kWindowMs));

  std::mt19937_64 rng(seed);
  double bandwidth = sample_metric(dist, Metric::throughput_Bps, 0, rng);
  double gap = sample_metric(dist, Metric::gap_ms, 0, rng);
  s.sampled_gaps_ms.push_back(gap);
  std::size_t next_active = gap_epochs(gap);
  for (std::size_t i = 0; i < n; ++i) {
    LinkEpoch e;
    e.index = i;
    e.one_way_delay_ms = sample_handshake(dist, rng) / 2.0;
    if (i == next_active) {
      e.loss_active = true;
      e.loss_rate = std::clamp(sample_metric(dist, Metric::retx_rate, i, rng), 0.0, 1.0);
      bandwidth = sample_metric(dist, Metric::throughput_Bps, i, rng);
      gap = sample_metric(dist, Metric::gap_ms, i, rng);
      s.sampled_gaps_ms.push_back(gap);
      next_active = i + gap_epochs(gap);
    }
    e.bandwidth_Bps = bandwidth;
    s.epochs.push_back(e);
  }
  s.validate();
  return s;
}

MetricDistributions synthetic_distributions(std::string_view preset) {
  const auto shape = preset_shape(preset);
  MetricDistributions dist;
  const std::array<Shape, 4> shapes = {shape.retx_rate, shape.gap_ms, shape.throughput_Bps, shape.ack_rtt_ms};
  for (auto m : kMetrics) {
    const auto& sh = shapes[static_cast<std::size_t>(m)];
    auto pct = PercentileSet::log_normal(sh.median, sh.sigma);
    if (m == Metric::retx_rate) pct.p90 = kRetxTail;  // exact, not 0.4000000001
    for (std::size_t w = 0; w < kSyntheticWindows; ++w) dist.metric(m).push_back({w, 0, pct});
  }
  static const boost::math::normal_distribution<double> standard;
  for (std::size_t k = 0; k < kHandshakeSamples; ++k) {
    const double u = (static_cast<double>(k) + 0.5) / static_cast<double>(kHandshakeSamples);
    dist.handshake_rtt_ms.push_back(k == kHandshakeSamples / 2
                                        ? kHandshakeMedianMs
                                        : kHandshakeMedianMs * std::exp(kHandshakeSigma *
                                                                        boost::math::quantile(standard, u)));
  }
  dist.lossy_fraction = 0.32;
  return dist;
}

std::string_view condition_preset(ConditionClass c) {
  switch (c) {
    case ConditionClass::good: return "paper-good";
    case ConditionClass::median: return "paper-median";
    case ConditionClass::poor: return "paper-poor";
  }
  return "paper-median";
}

std::string export_netem_script(const EmulationSchedule& schedule, std::string_view device) {
  schedule.validate();
  std::ostringstream out;
  out << "#!/bin/sh\n";
  out << "# netem replay: mode=" << to_string(schedule.mode) << " class=" << schedule.class_label
      << " seed=" << schedule.seed << " source=" << schedule.source << "\n";
  out << "# one command per epoch; epochs are paced every " << trimmed(schedule.epochs.front().duration_ms, 3)
      << " ms\n";
  out << "DEV=${DEV:-" << device << "}\n";
  for (const auto& e : schedule.epochs) {
    out << "tc qdisc replace dev $DEV root netem delay " << trimmed(e.one_way_delay_ms, 3) << "ms loss "
        << trimmed(e.loss_active ? e.loss_rate * 100.0 : 0.0, 4) << "%";
    if (std::isfinite(e.bandwidth_Bps)) out << " rate " << trimmed(e.bandwidth_Bps * 8.0, 0) << "bit";
    out << "\n";
    out << "sleep " << trimmed(e.duration_ms / 1000.0, 6) << "\n";
  }
  return out.str();
}

void write_schedule(std::ostream& out, const EmulationSchedule& schedule) {
  out << kScheduleSchema << '\n';
  out << "mode=" << to_string(schedule.mode) << '\n';
  out << "class=" << schedule.class_label << '\n';
  out << "seed=" << schedule.seed << '\n';
  out << "source=" << schedule.source << '\n';
  out << "index,duration_ms,loss_rate,loss_active,one_way_delay_ms,bandwidth_Bps\n";
  for (const auto& e : schedule.epochs) {
    out << e.index << ',' << text::format_double(e.duration_ms) << ',' << text::format_double(e.loss_rate) << ','
        << (e.loss_active ? 1 : 0) << ',' << text::format_double(e.one_way_delay_ms) << ','
        << text::format_double(e.bandwidth_Bps) << '\n';
  }
}

EmulationSchedule read_schedule(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != kScheduleSchema) {
    throw Error(std::string("schedule file lacks schema ") + kScheduleSchema);
  }
  EmulationSchedule s;
  std::map<std::string, std::string, std::less<>> header;
  std::size_t line_no = 1;
  bool in_records = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto view = text::trim(line);
    if (view.empty()) continue;
    if (!in_records) {
      if (view.starts_with("index,")) {
        in_records = true;
        continue;
      }
      const auto eq = view.find('=');
      if (eq == std::string_view::npos) throw Error("schedule line " + std::to_string(line_no) + ": expected key=value");
      header.emplace(std::string(view.substr(0, eq)), std::string(view.substr(eq + 1)));
      continue;
    }
    const auto f = text::split(view, ',');
    if (f.size() != 6) throw Error("schedule line " + std::to_string(line_no) + ": expected 6 fields");
    try {
      LinkEpoch e;
      e.index = text::parse_uint(f[0], "index");
      e.duration_ms = text::parse_double(f[1], "duration_ms");
      e.loss_rate = text::parse_double(f[2], "loss_rate");
      e.loss_active = text::parse_int(f[3], "loss_active") != 0;
      e.one_way_delay_ms = text::parse_double(f[4], "one_way_delay_ms");
      e.bandwidth_Bps = text::parse_double(f[5], "bandwidth_Bps");
      s.epochs.push_back(e);
    } catch (const Error& err) {
      throw Error("schedule line " + std::to_string(line_no) + ": " + err.what());
    }
  }
  auto get = [&header](const char* key) {
    auto it = header.find(key);
    if (it == header.end()) throw Error(std::string("schedule header missing '") + key + "'");
    return it->second;
  };
  s.mode = parse_schedule_mode(get("mode"));
  s.class_label = get("class");
  s.seed = text::parse_uint(get("seed"), "seed");
  s.source = get("source");
  s.validate();
  return s;
}

}  // namespace h2shard
