#include "h2shard/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <istream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <thread>

#include "h2shard/error.hpp"
#include "h2shard/percentile.hpp"
#include "h2shard/text_format.hpp"
#include "json.hpp"

namespace h2shard {

using nlohmann::ordered_json;

namespace {

ordered_json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double read_number(const nlohmann::json& j) {
  if (j.is_string()) return text::parse_double(j.get<std::string>(), "number");
  return j.get<double>();
}

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void maybe_number(const nlohmann::json& j, const char* key, double& out) {
  if (j.contains(key)) out = read_number(j.at(key));
}

ordered_json to_json(const ExperimentConfig& c) {
  ordered_json s;
  if (!c.schedule.file.empty()) {
    s["file"] = c.schedule.file;
  } else {
    s["mode"] = c.schedule.mode;
    if (c.schedule.mode == "constant") {
      s["rtt_ms"] = c.schedule.rtt_ms;
      s["bandwidth_Bps"] = number_or_inf(c.schedule.bandwidth_Bps);
      s["loss_rate"] = c.schedule.loss_rate;
    } else {
      s["class"] = c.schedule.class_label;
      if (!c.schedule.preset.empty()) s["preset"] = c.schedule.preset;
      if (!c.schedule.distributions.empty()) s["distributions"] = c.schedule.distributions;
    }
    s["duration_ms"] = c.schedule.duration_ms;
  }
  ordered_json j;
  if (c.page_file.empty()) {
    j["page"] = c.page;
  } else {
    j["page_file"] = c.page_file;
  }
  j["shard"] = c.shard;
  j["protocol"] = to_string(c.protocol);
  j["h1_conns_per_host"] = c.h1_conns_per_host;
  j["h2_conns_per_host"] = c.h2_conns_per_host;
  j["dns_latency_ms"] = c.dns_latency_ms;
  j["icw"] = c.icw;
  j["tls_rtts"] = c.tls_rtts;
  j["schedule"] = s;
  j["trials"] = c.trials;
  j["base_seed"] = c.base_seed;
  j["workers"] = c.workers;
  return j;
}

ExperimentConfig from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  maybe(j, "page", c.page);
  maybe(j, "page_file", c.page_file);
  maybe(j, "shard", c.shard);
  if (j.contains("protocol")) c.protocol = parse_protocol(j.at("protocol").get<std::string>());
  maybe(j, "h1_conns_per_host", c.h1_conns_per_host);
  maybe(j, "h2_conns_per_host", c.h2_conns_per_host);
  maybe_number(j, "dns_latency_ms", c.dns_latency_ms);
  maybe(j, "icw", c.icw);
  maybe(j, "tls_rtts", c.tls_rtts);
  maybe(j, "trials", c.trials);
  maybe(j, "base_seed", c.base_seed);
  maybe(j, "workers", c.workers);
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    auto& r = c.schedule;
    maybe(s, "file", r.file);
    maybe(s, "mode", r.mode);
    maybe(s, "class", r.class_label);
    maybe(s, "preset", r.preset);
    maybe(s, "distributions", r.distributions);
    maybe_number(s, "duration_ms", r.duration_ms);
    maybe_number(s, "rtt_ms", r.rtt_ms);
    maybe_number(s, "bandwidth_Bps", r.bandwidth_Bps);
    maybe_number(s, "loss_rate", r.loss_rate);
  }
  c.validate();
  return c;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return in;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (trials < 1) throw Error("trials must be at least 1");
  if (icw < 1) throw Error("icw must be at least 1 segment");
  if (h1_conns_per_host < 1 || h2_conns_per_host < 1) throw Error("connection counts must be at least 1");
  parse_shard_strategy(shard);
  if (schedule.file.empty()) {
    const auto& m = schedule.mode;
    if (m != "quality" && m != "condition" && m != "constant") {
      throw Error("schedule mode must be quality, condition or constant");
    }
    if (m == "quality") parse_quality_class(schedule.class_label);
    if (m == "condition") parse_condition_class(schedule.class_label);
    if (!(schedule.duration_ms >= kWindowMs)) throw Error("schedule duration must cover at least one epoch");
  }
}

ExperimentConfig read_experiment_config(std::istream& in) {
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("experiment config: ") + e.what());
  }
}

void write_experiment_config(std::ostream& out, const ExperimentConfig& cfg) { out << to_json(cfg).dump(2) << '\n'; }

PageSpec experiment_page(const ExperimentConfig& cfg) {
  PageSpec page;
  if (!cfg.page_file.empty()) {
    auto in = open_input(cfg.page_file);
    page = read_page(in);
  } else {
    page = preset_page(cfg.page);
  }
  return shard(page, parse_shard_strategy(cfg.shard));
}

ProtocolConfig experiment_protocol(const ExperimentConfig& cfg) {
  ProtocolConfig p;
  p.protocol = cfg.protocol;
  p.h1_max_conns_per_host = cfg.h1_conns_per_host;
  p.h2_conns_per_host = cfg.h2_conns_per_host;
  p.dns_latency_ms = cfg.dns_latency_ms;
  return p;
}

netsim::SimConfig experiment_sim_config(const ExperimentConfig& cfg) {
  netsim::SimConfig s;
  s.icw_segments = cfg.icw;
  s.tls_rtts = cfg.tls_rtts;
  return s;
}

ScheduleSource::ScheduleSource(const ScheduleRef& ref, std::uint64_t base_seed) : ref_(ref) {
  if (!ref.file.empty()) {
    auto in = open_input(ref.file);
    fixed_ = read_schedule(in);
    return;
  }
  if (ref.mode == "constant") {
    fixed_ = constant_schedule(ref.rtt_ms, ref.bandwidth_Bps, ref.loss_rate);
    return;
  }
  const bool quality = ref.mode == "quality";
  std::string source;
  if (!ref.distributions.empty()) {
    auto in = open_input(ref.distributions);
    dist_ = read_distributions(in);
    source = ref.distributions;
  } else {
    source = !ref.preset.empty()    ? ref.preset
             : quality              ? std::string("paper-quality")
                                    : std::string(condition_preset(parse_condition_class(ref.class_label)));
    dist_ = synthetic_distributions(source);
  }
  if (quality) {
    fixed_ = quality_schedule(dist_, parse_quality_class(ref.class_label), ref.duration_ms, base_seed, source);
  } else {
    condition_ = parse_condition_class(ref.class_label);
    ref_.preset = source;
  }
}

EmulationSchedule ScheduleSource::for_trial(std::uint64_t seed) const {
  if (fixed_) return *fixed_;
  return condition_schedule(dist_, condition_, ref_.duration_ms, seed, ref_.preset);
}

SummaryStats summarize(std::span<const double> values) {
  if (values.empty()) throw Error("no trials to summarize");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  SummaryStats s;
  s.count = sorted.size();
  s.median = nearest_rank(sorted, 0.5);
  s.p25 = nearest_rank(sorted, 0.25);
  s.p75 = nearest_rank(sorted, 0.75);
  s.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
  s.min = sorted.front();
  s.max = sorted.back();
  return s;
}

std::vector<double> TrialSet::plts() const {
  std::vector<double> out;
  out.reserve(trials.size());
  for (const auto& t : trials) out.push_back(t.plt_ms);
  return out;
}

std::size_t TrialSet::unconverged() const {
  return static_cast<std::size_t>(
      std::count_if(trials.begin(), trials.end(), [](const TrialResult& t) { return !t.converged; }));
}

TrialSet run_trials(const ExperimentConfig& cfg) {
  cfg.validate();
  const PageSpec page = experiment_page(cfg);
  const ProtocolConfig proto = experiment_protocol(cfg);
  const netsim::SimConfig sim_cfg = experiment_sim_config(cfg);
  const ScheduleSource schedules(cfg.schedule, cfg.base_seed);

  TrialSet set;
  set.config = cfg;
  set.page_name = page.name;
  set.label = page.name + "/" + cfg.shard + "/" + to_string(cfg.protocol) + "/" +
              (cfg.schedule.file.empty() ? cfg.schedule.mode + ":" + cfg.schedule.class_label : cfg.schedule.file);
  set.trials.resize(cfg.trials);

  std::size_t workers = cfg.workers ? cfg.workers : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, cfg.trials);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (auto i = next++; i < cfg.trials; i = next++) {
      try {
        const std::uint64_t seed = cfg.base_seed + i;
        const auto r = load_page(page, proto, schedules.for_trial(seed), sim_cfg, seed);
        auto& t = set.trials[i];
        t.index = i;
        t.seed = seed;
        t.plt_ms = r.plt_ms;
        t.converged = r.converged;
        t.connections = r.connections_opened();
        for (const auto& c : r.connections) {
          t.retransmissions += c.retransmissions;
          t.wire_bytes += c.bytes;
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = cfg.trials;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return set;
}

void write_trials_csv(std::ostream& out, const TrialSet& set) {
  out << "trial,seed,plt_ms,converged,connections,retransmissions,wire_bytes\n";
  for (const auto& t : set.trials) {
    out << t.index << ',' << t.seed << ',' << text::format_trimmed(t.plt_ms, 3) << ',' << (t.converged ? 1 : 0) << ','
        << t.connections << ',' << t.retransmissions << ',' << t.wire_bytes << '\n';
  }
}

void write_trials_json(std::ostream& out, const TrialSet& set) {
  ordered_json j;
  j["schema"] = kTrialSchema;
  j["label"] = set.label;
  j["page"] = set.page_name;
  j["config"] = to_json(set.config);
  const auto s = set.summary();
  j["summary"] = {{"count", s.count}, {"median", s.median}, {"p25", s.p25}, {"p75", s.p75},
                  {"mean", s.mean},   {"min", s.min},       {"max", s.max}, {"unconverged", set.unconverged()}};
  auto trials = ordered_json::array();
  for (const auto& t : set.trials) {
    trials.push_back({{"trial", t.index},
                      {"seed", t.seed},
                      {"plt_ms", t.plt_ms},
                      {"converged", t.converged},
                      {"connections", t.connections},
                      {"retransmissions", t.retransmissions},
                      {"wire_bytes", t.wire_bytes}});
  }
  j["trials"] = std::move(trials);
  out << j.dump(2) << '\n';
}

TrialSet read_trials_json(std::istream& in) {
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.value("schema", std::string()) != kTrialSchema) {
      throw Error(std::string("trial set lacks schema ") + kTrialSchema);
    }
    TrialSet set;
    set.label = j.value("label", std::string());
    set.page_name = j.at("page").get<std::string>();
    set.config = from_json(j.at("config"));
    for (const auto& t : j.at("trials")) {
      TrialResult r;
      r.index = t.at("trial").get<std::size_t>();
      r.seed = t.at("seed").get<std::uint64_t>();
      r.plt_ms = t.at("plt_ms").get<double>();
      r.converged = t.at("converged").get<bool>();
      r.connections = t.value("connections", std::size_t{0});
      r.retransmissions = t.value("retransmissions", std::uint64_t{0});
      r.wire_bytes = t.value("wire_bytes", std::uint64_t{0});
      set.trials.push_back(r);
    }
    if (set.trials.empty()) throw Error("trial set '" + set.label + "' has no trials");
    return set;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("trial set: ") + e.what());
  }
}

double median_diff_pct(double from, double to) {
  if (from == 0) throw Error("median difference relative to a zero median");
  return (to - from) / from * 100.0;
}

Report compare(std::span<const TrialSet> sets) {
  if (sets.empty()) throw Error("report needs at least one trial set");
  Report r;
  for (const auto& s : sets) {
    if (s.trials.empty()) throw Error("trial set '" + s.label + "' has no trials");
    r.labels.push_back(s.label);
    r.stats.push_back(s.summary());
    if (s.unconverged() > 0) {
      r.warnings.push_back(s.label + ": " + std::to_string(s.unconverged()) + " trials did not converge");
    }
  }
  for (std::size_t i = 1; i < sets.size(); ++i) {
    if (sets[i].page_name != sets[0].page_name) {
      r.warnings.push_back("page mismatch: '" + sets[0].page_name + "' vs '" + sets[i].page_name + "'");
    }
  }
  for (std::size_t i = 0; i < sets.size(); ++i) {
    for (std::size_t k = i + 1; k < sets.size(); ++k) {
      r.pairs.push_back({i, k, median_diff_pct(r.stats[i].median, r.stats[k].median)});
    }
  }
  return r;
}

void write_report_text(std::ostream& out, const Report& r) {
  auto f = [](double v) { return text::format_trimmed(v, 1); };
  for (std::size_t i = 0; i < r.labels.size(); ++i) {
    const auto& s = r.stats[i];
    out << '[' << i << "] " << r.labels[i] << "  n=" << s.count << " median=" << f(s.median) << " p25=" << f(s.p25)
        << " p75=" << f(s.p75) << " mean=" << f(s.mean) << " min=" << f(s.min) << " max=" << f(s.max) << '\n';
  }
  for (const auto& p : r.pairs) {
    const auto pct = text::format_trimmed(p.median_diff_pct, 1);
    out << '[' << p.from << "] -> [" << p.to << "] median " << (p.median_diff_pct >= 0 ? "+" : "") << pct << "%\n";
  }
  for (const auto& w : r.warnings) out << "warning: " << w << '\n';
}

void write_report_csv(std::ostream& out, const Report& r) {
  out << "set,label,count,median,p25,p75,mean,min,max,median_diff_pct_vs_0\n";
  for (std::size_t i = 0; i < r.labels.size(); ++i) {
    const auto& s = r.stats[i];
    out << i << ',' << r.labels[i] << ',' << s.count << ',' << text::format_double(s.median) << ','
        << text::format_double(s.p25) << ',' << text::format_double(s.p75) << ',' << text::format_double(s.mean)
        << ',' << text::format_double(s.min) << ',' << text::format_double(s.max) << ','
        << text::format_double(i == 0 ? 0.0 : median_diff_pct(r.stats[0].median, s.median)) << '\n';
  }
}

}  // namespace h2shard
