#include "h2shard/characterize.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>

#include "h2shard/error.hpp"
#include "json.hpp"

namespace h2shard {
namespace {

// Union of byte ranges already sent by the server.
class ByteRangeSet {
 public:
  bool overlaps(std::uint64_t begin, std::uint64_t end) const {
    auto it = ranges_.upper_bound(begin);
    if (it != ranges_.begin()) {
      auto prev = std::prev(it);
      if (prev->second > begin) return true;
    }
    return it != ranges_.end() && it->first < end;
  }

  void insert(std::uint64_t begin, std::uint64_t end) {
    auto it = ranges_.upper_bound(begin);
    if (it != ranges_.begin()) {
      auto prev = std::prev(it);
      if (prev->second >= begin) {
        begin = prev->first;
        end = std::max(end, prev->second);
        it = ranges_.erase(prev);
      }
    }
    while (it != ranges_.end() && it->first <= end) {
      end = std::max(end, it->second);
      it = ranges_.erase(it);
    }
    ranges_.emplace(begin, end);
  }

 private:
  std::map<std::uint64_t, std::uint64_t> ranges_;
};

bool is_pure_ack(const PacketRecord& r) {
  return r.direction == Direction::to_server && r.payload_len == 0 && r.flags.ack && !r.flags.syn &&
         !r.flags.fin && !r.flags.rst;
}

}  // namespace

std::optional<double> WindowMetrics::retx_rate() const {
  if (segments == 0) return std::nullopt;
  return static_cast<double>(retransmissions) / static_cast<double>(segments);
}

const char* to_string(QualityClass q) {
  switch (q) {
    case QualityClass::good: return "Good";
    case QualityClass::fair: return "Fair";
    case QualityClass::passable: return "Passable";
    case QualityClass::poor: return "Poor";
  }
  return "?";
}

const char* to_string(ConditionClass c) {
  switch (c) {
    case ConditionClass::good: return "Good";
    case ConditionClass::median: return "Median";
    case ConditionClass::poor: return "Poor";
  }
  return "?";
}

QualityClass parse_quality_class(std::string_view name) {
  for (auto q : kQualityClasses) {
    if (name == to_string(q)) return q;
  }
  throw Error("unknown quality class '" + std::string(name) + "'");
}

ConditionClass parse_condition_class(std::string_view name) {
  for (auto c : kConditionClasses) {
    if (name == to_string(c)) return c;
  }
  throw Error("unknown condition class '" + std::string(name) + "'");
}

const char* to_string(Metric m) {
  switch (m) {
    case Metric::retx_rate: return "retx_rate";
    case Metric::gap_ms: return "gap_ms";
    case Metric::throughput_Bps: return "throughput_Bps";
    case Metric::ack_rtt_ms: return "ack_rtt_ms";
  }
  return "?";
}

std::vector<WindowMetrics> slice_windows(const ConnectionTrace& trace, std::int64_t window_us) {
  std::vector<WindowMetrics> windows;
  if (trace.records.empty()) return windows;
  const auto last = static_cast<std::size_t>((trace.end_us() - trace.start_us) / window_us);
  windows.resize(last + 1);
  for (std::size_t i = 0; i < windows.size(); ++i) windows[i].window_index = i;

  ByteRangeSet sent;
  // Per window: first ack time, last ack time, ack count.
  std::vector<std::int64_t> first_ack(windows.size(), 0), last_ack(windows.size(), 0);
  std::vector<std::size_t> ack_count(windows.size(), 0);

  for (const auto& r : trace.records) {
    const auto w = static_cast<std::size_t>((r.timestamp_us - trace.start_us) / window_us);
    auto& win = windows[w];
    if (r.direction == Direction::to_client && r.payload_len > 0) {
      const auto begin = r.seq;
      const auto end = r.seq + r.payload_len;
      ++win.segments;
      win.bytes += r.payload_len;
      if (sent.overlaps(begin, end)) ++win.retransmissions;
      sent.insert(begin, end);
    } else if (is_pure_ack(r)) {
      if (ack_count[w] == 0) first_ack[w] = r.timestamp_us;
      last_ack[w] = r.timestamp_us;
      ++ack_count[w];
    }
  }
  for (std::size_t w = 0; w < windows.size(); ++w) {
    if (ack_count[w] >= 2) {
      // Mean of consecutive differences telescopes to span / (n - 1).
      windows[w].ack_lapse_ms =
          static_cast<double>(last_ack[w] - first_ack[w]) / 1000.0 / static_cast<double>(ack_count[w] - 1);
    }
  }
  return windows;
}

std::vector<ClusterEvent> detect_clusters(std::span<const WindowMetrics> windows, double window_ms) {
  std::vector<ClusterEvent> events;
  for (const auto& w : windows) {
    if (w.retransmissions == 0) continue;
    events.push_back({w.window_index, static_cast<double>(w.window_index + 1) * window_ms, w.retransmissions,
                      w.retx_rate().value_or(0.0)});
  }
  return events;
}

std::vector<double> cluster_gaps_ms(std::span<const ClusterEvent> clusters) {
  std::vector<double> gaps;
  for (std::size_t i = 1; i < clusters.size(); ++i) {
    gaps.push_back(clusters[i].event_time_ms - clusters[i - 1].event_time_ms);
  }
  return gaps;
}

ConditionClass classify_median_gap(double median_gap_ms) {
  if (median_gap_ms < kPoorBelowMs) return ConditionClass::poor;
  if (median_gap_ms < kGoodFromMs) return ConditionClass::median;
  return ConditionClass::good;
}

std::optional<ConditionClass> classify_condition(std::span<const ClusterEvent> clusters) {
  if (clusters.size() < 2) return std::nullopt;
  return classify_median_gap(nearest_rank_unsorted(cluster_gaps_ms(clusters), 0.5));
}

TraceAnalysis analyze_trace(const ConnectionTrace& trace) {
  TraceAnalysis a;
  a.windows = slice_windows(trace);
  a.clusters = detect_clusters(a.windows);
  a.condition = classify_condition(a.clusters);
  return a;
}

std::size_t MetricDistributions::horizon() const {
  std::size_t h = 0;
  for (const auto& s : series) {
    if (!s.empty()) h = std::max(h, s.back().window_index + 1);
  }
  return h;
}

bool MetricDistributions::empty() const {
  return std::all_of(series.begin(), series.end(), [](const auto& s) { return s.empty(); });
}

const PercentileSet& MetricDistributions::at(Metric m, std::size_t window_index) const {
  const auto& s = metric(m);
  if (s.empty()) throw Error(std::string("distribution has no samples for ") + to_string(m));
  const auto idx = window_index % horizon();
  auto it = std::upper_bound(s.begin(), s.end(), idx,
                             [](std::size_t v, const WindowPercentiles& w) { return v < w.window_index; });
  if (it == s.begin()) return s.front().pct;
  return std::prev(it)->pct;
}

MetricDistributions build_distributions(std::span<const ConnectionTrace> traces,
                                        std::optional<ConditionClass> only) {
  std::array<std::map<std::size_t, std::vector<double>>, 4> samples;
  auto add = [&samples](Metric m, std::size_t w, double v) { samples[static_cast<std::size_t>(m)][w].push_back(v); };

  MetricDistributions dist;
  std::size_t used = 0;
  std::size_t lossy = 0;
  for (const auto& trace : traces) {
    if (trace.syn_to_synack_rtt_ms) dist.handshake_rtt_ms.push_back(*trace.syn_to_synack_rtt_ms);
    if (trace.records.empty()) continue;
    const auto a = analyze_trace(trace);
    if (a.clusters.empty()) continue;
    ++lossy;
    if (only && a.condition != only) continue;
    ++used;
    for (const auto& w : a.windows) {
      // Loss rates are conditional on a cluster: the rate a lossy epoch applies.
      if (w.retransmissions > 0) add(Metric::retx_rate, w.window_index, *w.retx_rate());
      if (w.segments > 0) add(Metric::throughput_Bps, w.window_index, w.throughput_Bps());
      if (w.ack_lapse_ms) add(Metric::ack_rtt_ms, w.window_index, *w.ack_lapse_ms);
    }
    for (std::size_t i = 1; i < a.clusters.size(); ++i) {
      add(Metric::gap_ms, a.clusters[i].window_index, a.clusters[i].event_time_ms - a.clusters[i - 1].event_time_ms);
    }
  }
  if (used == 0) throw Error("no lossy traces");
  for (auto m : kMetrics) {
    for (auto& [w, values] : samples[static_cast<std::size_t>(m)]) {
      dist.metric(m).push_back({w, values.size(), PercentileSet::from_samples(values)});
    }
  }
  std::sort(dist.handshake_rtt_ms.begin(), dist.handshake_rtt_ms.end());
  dist.lossy_fraction = static_cast<double>(lossy) / static_cast<double>(traces.size());
  return dist;
}

double lossy_fraction(std::span<const ConnectionTrace> traces) {
  if (traces.empty()) throw Error("lossy fraction of an empty trace set");
  std::size_t lossy = 0;
  for (const auto& t : traces) {
    const auto windows = slice_windows(t);
    if (std::any_of(windows.begin(), windows.end(), [](const WindowMetrics& w) { return w.retransmissions > 0; })) {
      ++lossy;
    }
  }
  return static_cast<double>(lossy) / static_cast<double>(traces.size());
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("correlation series differ in length");
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::array<std::optional<double>, 4> loss_latency_correlation(std::span<const LatencySample> samples) {
  if (samples.size() < 3) throw Error("correlation needs at least 3 connections");
  std::vector<double> loss, mn, mx, avg, connect;
  for (const auto& s : samples) {
    loss.push_back(s.total_retx_rate);
    mn.push_back(s.min_rtt_ms);
    mx.push_back(s.max_rtt_ms);
    avg.push_back(s.avg_rtt_ms);
    connect.push_back(s.connect_time_ms);
  }
  return {pearson(loss, mn), pearson(loss, mx), pearson(loss, avg), pearson(loss, connect)};
}

void write_distributions(std::ostream& out, const MetricDistributions& dist) {
  nlohmann::ordered_json j;
  j["schema"] = kDistSchema;
  j["lossy_fraction"] = dist.lossy_fraction;
  auto& metrics = j["metrics"] = nlohmann::ordered_json::object();
  for (auto m : kMetrics) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& w : dist.metric(m)) {
      arr.push_back({{"window", w.window_index},
                     {"samples", w.samples},
                     {"p10", w.pct.p10},
                     {"p25", w.pct.p25},
                     {"p50", w.pct.p50},
                     {"p75", w.pct.p75},
                     {"p90", w.pct.p90}});
    }
    metrics[to_string(m)] = std::move(arr);
  }
  j["handshake_rtt_ms"] = dist.handshake_rtt_ms;
  out << j.dump(1) << '\n';
}

MetricDistributions read_distributions(std::istream& in) {
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("distributions file is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("schema", "") != kDistSchema) {
    throw Error(std::string("distributions file lacks schema ") + kDistSchema);
  }
  try {
    MetricDistributions dist;
    dist.lossy_fraction = j.at("lossy_fraction").get<double>();
    const auto& metrics = j.at("metrics");
    for (auto m : kMetrics) {
      if (!metrics.contains(to_string(m))) continue;
      for (const auto& w : metrics.at(to_string(m))) {
        WindowPercentiles wp;
        wp.window_index = w.at("window").get<std::size_t>();
        wp.samples = w.value("samples", std::size_t{0});
        wp.pct = {w.at("p10").get<double>(), w.at("p25").get<double>(), w.at("p50").get<double>(),
                  w.at("p75").get<double>(), w.at("p90").get<double>()};
        if (!wp.pct.monotone()) throw Error("percentiles not monotone in distributions file");
        dist.metric(m).push_back(wp);
      }
      std::sort(dist.metric(m).begin(), dist.metric(m).end(),
                [](const auto& a, const auto& b) { return a.window_index < b.window_index; });
    }
    dist.handshake_rtt_ms = j.value("handshake_rtt_ms", std::vector<double>{});
    std::sort(dist.handshake_rtt_ms.begin(), dist.handshake_rtt_ms.end());
    return dist;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed distributions file: ") + e.what());
  }
}

}  // namespace h2shard
