// Acceptance run: one PASS/FAIL line per criterion, 200 trials per cell.
// Exit status is the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "h2shard/characterize.hpp"
#include "h2shard/experiment.hpp"
#include "h2shard/http_model.hpp"
#include "h2shard/netsim.hpp"
#include "h2shard/pages.hpp"
#include "h2shard/schedule.hpp"
#include "trace_gen.hpp"

using namespace h2shard;

namespace {

constexpr std::size_t kTrials = 200;

struct Verdict {
  bool pass = true;
  std::string detail;
};

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.1f%%", v);
  return buf;
}

std::string ms(double v) { return std::to_string(static_cast<long long>(std::llround(v))); }

double nearest_rank_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[static_cast<std::size_t>(std::ceil(0.5 * static_cast<double>(v.size()))) - 1];
}

struct Cell {
  std::string page = "P365x1K";
  std::string shard = "none";
  Protocol protocol = Protocol::h2;
  std::string mode = "quality";
  std::string cls = "Good";
  std::uint32_t icw = 10;

  auto key() const { return std::tuple(page, shard, protocol, mode, cls, icw); }
};

std::map<decltype(Cell{}.key()), double> g_medians;

double median_plt(const Cell& cell) {
  const auto k = cell.key();
  if (auto it = g_medians.find(k); it != g_medians.end()) return it->second;
  ExperimentConfig c;
  c.page = cell.page;
  c.shard = cell.shard;
  c.protocol = cell.protocol;
  c.icw = cell.icw;
  c.schedule.mode = cell.mode;
  c.schedule.class_label = cell.cls;
  c.trials = kTrials;
  const auto set = run_trials(c);
  if (set.unconverged() > 0) std::cerr << "note: " << set.label << " has unconverged trials\n";
  const double m = set.summary().median;
  g_medians[k] = m;
  return m;
}

double diff_pct(double from, double to) { return (to - from) / from * 100.0; }

// 1
Verdict oracle_scenarios() {
  Verdict v;
  netsim::SimConfig cfg;
  cfg.tls_rtts = 0;
  const auto sched = constant_schedule(100, INFINITY, 0);
  auto last = [&](std::uint64_t bytes) {
    const std::vector<netsim::ConnectionPlan> w{{0, bytes}};
    return netsim::run(sched, w, cfg, 1).connections[0].last_delivery_ms.value_or(-1);
  };
  const double one = last(1460), fifteen = last(15 * 1460);
  PageSpec html;
  html.name = "html";
  html.html_size = 1460;
  html.hostnames = {"host0"};
  ProtocolConfig pc;
  pc.protocol = Protocol::h1;
  const double page = load_page(html, pc, sched, cfg, 1).plt_ms;
  v.pass = std::abs(one - 200) < 1 && std::abs(fifteen - 300) < 1 && std::abs(page - 200) < 1;
  v.detail = "1 segment " + std::to_string(one) + " ms, 15 segments " + std::to_string(fifteen) +
             " ms, base HTML page " + std::to_string(page) + " ms";
  return v;
}

// 2
Verdict first_flight() {
  const netsim::SimConfig cfg;
  ProtocolConfig h1, h2;
  h1.protocol = Protocol::h1;
  h2.protocol = Protocol::h2;
  const auto small = first_flight_report(preset_page("P365x1K"), h1, cfg);
  const auto h2b = first_flight_report(preset_page("P365x1K"), h2, cfg);
  const auto big = first_flight_report(preset_page("P10x435K"), h1, cfg);
  Verdict v;
  v.pass = small == 6 * 1024 && h2b == 14'600 && big == 87'600;
  v.detail = "h1 1 KB objects " + std::to_string(small) + " B, h2 " + std::to_string(h2b) + " B, h1 435 KB objects " +
             std::to_string(big) + " B";
  return v;
}

const char* kQualities[] = {"Good", "Fair", "Passable", "Poor"};
const char* kConditions[] = {"Good", "Median", "Poor"};

// h2 vs h1 median difference in percent for a page under a quality.
double quality_diff(const std::string& page, const std::string& q) {
  const double h1 = median_plt({page, "none", Protocol::h1, "quality", q});
  const double h2 = median_plt({page, "none", Protocol::h2, "quality", q});
  return diff_pct(h1, h2);
}

// 3
Verdict small_objects() {
  Verdict v;
  for (auto q : kQualities) {
    const double d = quality_diff("P365x1K", q);
    v.pass = v.pass && d <= -5.0;
    v.detail += std::string(q) + " " + pct(d) + " ";
  }
  v.detail = "h2 vs h1: " + v.detail;
  return v;
}

// 4
Verdict large_objects() {
  Verdict v;
  for (auto q : kQualities) {
    const double d = quality_diff("P10x435K", q);
    // h1 lower by at least 5% of the h1 median.
    v.pass = v.pass && d >= 5.0;
    v.detail += std::string(q) + " " + pct(d) + " ";
  }
  v.detail = "h2 vs h1: " + v.detail;
  return v;
}

// 5
Verdict mixed_pages() {
  Verdict v;
  for (auto q : kQualities) {
    const double d2 = quality_diff("M2MB", q), d8 = quality_diff("M8MB", q), d12 = quality_diff("M12MB", q);
    const std::string qs = q;
    bool ok = d2 < 0 && d12 > 0;
    if (qs == "Good" || qs == "Fair") ok = ok && std::abs(d8) <= 10.0;
    if (qs == "Poor") ok = ok && d8 > 0;
    v.pass = v.pass && ok;
    v.detail += qs + " [2MB " + pct(d2) + " 8MB " + pct(d8) + " 12MB " + pct(d12) + "] ";
  }
  v.detail = "h2 vs h1: " + v.detail;
  return v;
}

// 6
Verdict sharding() {
  Verdict v;
  for (auto c : kConditions) {
    auto m = [&](const std::string& shard) { return median_plt({"M8MB", shard, Protocol::h2, "condition", c}); };
    const double a = m("preset:A"), b = m("preset:B"), cc = m("preset:C"), u = m("none");
    const bool ok = b <= cc && cc <= a && a < u && b <= 0.97 * std::min({cc, a, u});
    v.pass = v.pass && ok;
    v.detail += std::string(c) + " B/C/A/unsharded " + ms(b) + "/" + ms(cc) + "/" + ms(a) + "/" + ms(u) + " ";
  }
  return v;
}

// 7
Verdict connection_count() {
  Verdict v;
  double prev = INFINITY, last = 0;
  for (int k : {1, 2, 3, 6, 10}) {
    const double m = median_plt({"P10x435K", "rr:" + std::to_string(k), Protocol::h2, "condition", "Good"});
    v.pass = v.pass && m <= prev;
    prev = last = m;
    v.detail += std::to_string(k) + ":" + ms(m) + " ";
  }
  const double h1 = median_plt({"P10x435K", "none", Protocol::h1, "condition", "Good"});
  const double gap = std::abs(last - h1) / h1 * 100.0;
  v.pass = v.pass && gap <= 15.0;
  v.detail += "h1:" + ms(h1) + " (10 conns vs h1 " + pct(diff_pct(h1, last)) + ")";
  return v;
}

// 8
Verdict initial_window() {
  Verdict v;
  for (auto c : {"Median", "Poor"}) {
    const double i10 = median_plt({"P10x435K", "none", Protocol::h2, "condition", c, 10});
    const double i60 = median_plt({"P10x435K", "none", Protocol::h2, "condition", c, 60});
    const double d = diff_pct(i10, i60);
    v.pass = v.pass && std::abs(d) <= 10.0;
    v.detail += std::string(c) + " icw10 " + ms(i10) + " icw60 " + ms(i60) + " (" + pct(d) + ") ";
  }
  return v;
}

// 9
Verdict characterize_oracle() {
  Verdict v;
  std::mt19937_64 rng(2024);
  std::size_t checked = 0, traces = 0;
  std::map<std::string, std::size_t> classes;
  for (int t = 0; t < 300; ++t) {
    testgen::GenTrace g;
    g.key = "c" + std::to_string(t);
    g.start_us = static_cast<std::int64_t>(rng() % 10'000'000);
    g.handshake_us = 40'000 + static_cast<std::int64_t>(rng() % 80'000);
    g.windows = 20 + rng() % 60;
    // Cluster spacing drawn so all three classes show up.
    const std::size_t spacing_max = 1 + rng() % 20;
    for (std::size_t w = rng() % 5; w < g.windows; w += 1 + rng() % spacing_max) g.retx[w] = 1 + rng() % 4;
    const auto recs = testgen::generate(g);
    const auto a = assemble_connections(recs);
    if (a.traces.size() != 1) {
      v.pass = false;
      continue;
    }
    const auto got = analyze_trace(a.traces[0]);
    const auto want = testgen::expected(g);
    ++traces;
    for (const auto& w : got.windows) {
      const auto it = g.retx.find(w.window_index);
      v.pass = v.pass && w.retransmissions == (it == g.retx.end() ? 0 : it->second);
      ++checked;
    }
    v.pass = v.pass && cluster_gaps_ms(got.clusters) == want.gaps_ms;
    v.pass = v.pass && got.condition.has_value() == want.condition.has_value();
    if (got.condition && want.condition) {
      v.pass = v.pass && to_string(*got.condition) == *want.condition;
      ++classes[*want.condition];
    }
  }
  // Boundary gaps: clusters exactly 250 ms and 750 ms apart.
  std::vector<ClusterEvent> at250{{0, 70, 1, 0.1}, {3, 320, 1, 0.1}};
  std::vector<ClusterEvent> at750{{0, 70, 1, 0.1}, {10, 820, 1, 0.1}};
  const bool bounds = classify_condition(at250) == ConditionClass::median &&
                      classify_condition(at750) == ConditionClass::good &&
                      classify_median_gap(249.999) == ConditionClass::poor &&
                      classify_median_gap(749.999) == ConditionClass::median;
  v.pass = v.pass && bounds && classes.size() == 3;
  v.detail = std::to_string(traces) + " traces, " + std::to_string(checked) + " windows; classes Good/Median/Poor " +
             std::to_string(classes["Good"]) + "/" + std::to_string(classes["Median"]) + "/" +
             std::to_string(classes["Poor"]) + "; 250 ms -> Median, 750 ms -> Good" + (bounds ? "" : " (broken)");
  return v;
}

// 10
Verdict schedule_statistics() {
  Verdict v;
  const std::pair<ConditionClass, double> cases[] = {
      {ConditionClass::good, 1150}, {ConditionClass::median, 350}, {ConditionClass::poor, 165}};
  for (const auto& [c, target] : cases) {
    const auto d = synthetic_distributions(condition_preset(c));
    std::vector<double> gaps, rtts;
    for (std::uint64_t seed = 1; gaps.size() < 10'000; ++seed) {
      const auto s = condition_schedule(d, c, 60'000, seed);
      gaps.insert(gaps.end(), s.sampled_gaps_ms.begin(), s.sampled_gaps_ms.end());
      for (const auto& e : s.epochs) rtts.push_back(2 * e.one_way_delay_ms);
    }
    const double g = nearest_rank_median(gaps), r = nearest_rank_median(rtts);
    v.pass = v.pass && std::abs(g - target) <= 0.05 * target && std::abs(r - 70) <= 3.5;
    v.detail += std::string(to_string(c)) + " gap " + std::to_string(g) + " ms over " + std::to_string(gaps.size()) +
                ", rtt " + std::to_string(r) + " ms; ";
  }
  return v;
}

// 11
Verdict invariants() {
  Verdict v;
  std::size_t loads = 0, events = 0;
  netsim::SimConfig cfg;
  cfg.record_events = true;
  for (const auto page_name : kPresetPages) {
    for (auto proto : {Protocol::h1, Protocol::h2}) {
      for (auto c : kConditionClasses) {
        const auto d = synthetic_distributions(condition_preset(c));
        const auto page = preset_page(page_name);
        ProtocolConfig pc;
        pc.protocol = proto;
        const auto sched = condition_schedule(d, c, 60'000, 11);
        const auto r = load_page(page, pc, sched, cfg, 11);
        ++loads;
        std::uint64_t written = 0, delivered = 0;
        for (const auto& conn : r.connections) {
          written += conn.bytes;
          delivered += conn.bytes_delivered;
        }
        v.pass = v.pass && r.converged && !r.window_violation && written == page.total_bytes() + r.overhead_bytes &&
                 delivered == written;
      }
    }
  }
  // Raw event log check on a multi-connection run.
  const auto sched =
      condition_schedule(synthetic_distributions("paper-poor"), ConditionClass::poor, 60'000, 5);
  const std::vector<netsim::ConnectionPlan> w{{0, 800'000}, {0, 400'000}, {50, 1'200'000}};
  const auto r = netsim::run(sched, w, cfg, 5);
  for (const auto& e : r.events) {
    if (e.kind != netsim::EventKind::send) continue;
    ++events;
    v.pass = v.pass && static_cast<double>(e.in_flight) <= std::min(e.cwnd, static_cast<double>(cfg.rwnd));
  }
  // Determinism: identical configs give byte-identical outputs.
  ExperimentConfig c;
  c.page = "M2MB";
  c.schedule.mode = "condition";
  c.schedule.class_label = "Poor";
  c.trials = 20;
  std::ostringstream a1, a2, j1, j2;
  const auto s1 = run_trials(c), s2 = run_trials(c);
  write_trials_csv(a1, s1);
  write_trials_csv(a2, s2);
  write_trials_json(j1, s1);
  write_trials_json(j2, s2);
  const bool same = a1.str() == a2.str() && j1.str() == j2.str();
  v.pass = v.pass && same;
  // Percentile monotonicity in every built distribution.
  std::size_t sets = 0;
  auto monotone = [&](const MetricDistributions& d) {
    for (auto m : kMetrics) {
      for (const auto& x : d.metric(m)) {
        ++sets;
        v.pass = v.pass && x.pct.monotone();
      }
    }
  };
  for (auto p : kSyntheticPresets) monotone(synthetic_distributions(p));
  std::vector<ConnectionTrace> traces;
  std::mt19937_64 rng(7);
  for (int t = 0; t < 200; ++t) {
    testgen::GenTrace g{"t" + std::to_string(t), 0, 40'000 + static_cast<std::int64_t>(rng() % 60'000), 30, {}};
    for (std::size_t win = rng() % 4; win < g.windows; win += 1 + rng() % 12) g.retx[win] = 1 + rng() % 5;
    const auto recs = testgen::generate(g);
    auto a = assemble_connections(recs);
    traces.insert(traces.end(), a.traces.begin(), a.traces.end());
  }
  monotone(build_distributions(traces));
  for (auto c2 : kConditionClasses) monotone(build_distributions(traces, c2));
  v.detail = std::to_string(loads) + " loads conserve bytes within the window, " + std::to_string(events) +
             " send events checked, determinism " + (same ? "ok" : "broken") + ", " + std::to_string(sets) +
             " percentile sets monotone";
  return v;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"oracle micro-scenarios", oracle_scenarios},
      {"first-flight accounting", first_flight},
      {"P365x1K h2 faster than h1", small_objects},
      {"P10x435K h1 faster than h2", large_objects},
      {"mixed pages", mixed_pages},
      {"sharding sweep", sharding},
      {"connection-count sweep", connection_count},
      {"initial window 60 vs 10", initial_window},
      {"characterize oracle", characterize_oracle},
      {"schedule statistics", schedule_statistics},
      {"invariant suite", invariants},
  };
  const auto start = std::chrono::steady_clock::now();
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    if (!v.pass) ++failed;
    std::cout << (v.pass ? "PASS" : "FAIL") << ' ' << (i + 1) << ' ' << criteria[i].first << ": " << v.detail
              << std::endl;
  }
  const auto secs =
      std::chrono::duration_cast<std::chrono::seconds>(std::chrono::steady_clock::now() - start).count();
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed in " << secs << " s\n";
  return failed;
}
