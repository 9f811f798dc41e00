#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "h2shard/characterize.hpp"
#include "h2shard/error.hpp"
#include "h2shard/experiment.hpp"
#include "h2shard/http_model.hpp"
#include "h2shard/packet_log.hpp"
#include "h2shard/pages.hpp"
#include "h2shard/schedule.hpp"
#include "h2shard/text_format.hpp"

using namespace h2shard;

namespace {

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return in;
}

// "-" means stdout.
void write_out(const std::string& path, const std::function<void(std::ostream&)>& fn) {
  if (path == "-") {
    fn(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  fn(out);
  out.close();
  if (!out) throw Error("write to '" + path + "' failed");
}

MetricDistributions load_distributions(const std::string& preset, const std::string& file) {
  if (!file.empty()) {
    auto in = open_in(file);
    return read_distributions(in);
  }
  return synthetic_distributions(preset);
}

PageSpec load_page_arg(const std::string& preset, const std::string& file) {
  if (!file.empty()) {
    auto in = open_in(file);
    return read_page(in);
  }
  return preset_page(preset);
}

// count:law:lo:hi[:stretch], law one of uniform|geometric.
ObjectGroup parse_group(const std::string& text) {
  const auto f = text::split(text, ':');
  if (f.size() != 4 && f.size() != 5) throw Error("group '" + text + "' is not count:law:lo:hi[:stretch]");
  ObjectGroup g;
  g.count = text::parse_uint(f[0], "group count");
  if (f[1] == "uniform") {
    g.law.kind = SizeLaw::Kind::uniform;
  } else if (f[1] == "geometric") {
    g.law.kind = SizeLaw::Kind::geometric;
  } else {
    throw Error("group law must be uniform or geometric, got '" + std::string(f[1]) + "'");
  }
  g.law.lo = text::parse_uint(f[2], "group lo");
  g.law.hi = text::parse_uint(f[3], "group hi");
  if (f.size() == 5) {
    if (f[4] != "stretch") throw Error("group flag must be 'stretch', got '" + std::string(f[4]) + "'");
    g.stretch = true;
  }
  return g;
}

void print_summary(std::ostream& out, const TrialSet& set) {
  const auto s = set.summary();
  out << set.label << ": trials=" << s.count << " median_ms=" << text::format_trimmed(s.median, 1)
      << " p25_ms=" << text::format_trimmed(s.p25, 1) << " p75_ms=" << text::format_trimmed(s.p75, 1);
  if (const auto u = set.unconverged()) out << " unconverged=" << u;
  out << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cellular trace characterization and h1/h2 page-load emulation"};
  app.require_subcommand(1);
  std::function<void()> action;

  // analyze
  std::string log_path, dist_out = "-", only_class;
  auto* analyze = app.add_subcommand("analyze", "Packet log to per-window metric distributions (dist/v1)");
  analyze->add_option("log", log_path, "Packet log CSV")->required();
  analyze->add_option("-o,--output", dist_out, "Output file, '-' for stdout");
  analyze->add_option("--condition", only_class, "Restrict to one condition class (Good, Median, Poor)");
  analyze->callback([&] {
    action = [&] {
      auto in = open_in(log_path);
      const auto records = parse_packet_log(in);
      const auto assembled = assemble_connections(records);
      std::optional<ConditionClass> only;
      if (!only_class.empty()) only = parse_condition_class(only_class);
      const auto dist = build_distributions(assembled.traces, only);
      write_out(dist_out, [&](std::ostream& o) { write_distributions(o, dist); });
      std::cerr << "connections=" << assembled.traces.size() << " dropped=" << assembled.dropped
                << " lossy_fraction=" << text::format_trimmed(lossy_fraction(assembled.traces), 4) << '\n';
    };
  });

  // distributions synth
  std::string synth_preset, synth_out = "-";
  auto* dist_cmd = app.add_subcommand("distributions", "Distribution files");
  dist_cmd->require_subcommand(1);
  auto* dist_synth = dist_cmd->add_subcommand("synth", "Write a synthetic preset (dist/v1)");
  dist_synth->add_option("preset", synth_preset, "paper-good | paper-median | paper-poor | paper-quality")->required();
  dist_synth->add_option("-o,--output", synth_out, "Output file, '-' for stdout");
  dist_synth->callback([&] {
    action = [&] {
      const auto dist = synthetic_distributions(synth_preset);
      write_out(synth_out, [&](std::ostream& o) { write_distributions(o, dist); });
    };
  });

  // schedule
  std::string sched_mode = "quality", sched_class = "Good", sched_preset, sched_dist, sched_out = "-";
  double sched_duration = 60000;
  std::uint64_t sched_seed = 1;
  auto* sched_cmd = app.add_subcommand("schedule", "Build an emulation schedule (sched/v1)");
  sched_cmd->add_option("--mode", sched_mode, "quality | condition")->capture_default_str();
  sched_cmd->add_option("--class", sched_class, "Quality or condition class")->capture_default_str();
  sched_cmd->add_option("--preset", sched_preset, "Synthetic preset (default depends on mode)");
  sched_cmd->add_option("--distributions", sched_dist, "dist/v1 file used instead of a preset");
  sched_cmd->add_option("--duration-ms", sched_duration, "Schedule length")->capture_default_str();
  sched_cmd->add_option("--seed", sched_seed, "Sampling seed (condition mode)")->capture_default_str();
  sched_cmd->add_option("-o,--output", sched_out, "Output file, '-' for stdout");
  sched_cmd->callback([&] {
    action = [&] {
      const auto mode = parse_schedule_mode(sched_mode);
      EmulationSchedule s;
      if (mode == ScheduleMode::quality) {
        const auto preset = sched_preset.empty() ? std::string("paper-quality") : sched_preset;
        const auto dist = load_distributions(preset, sched_dist);
        s = quality_schedule(dist, parse_quality_class(sched_class), sched_duration, sched_seed,
                             sched_dist.empty() ? preset : sched_dist);
      } else {
        const auto c = parse_condition_class(sched_class);
        const auto preset = sched_preset.empty() ? std::string(condition_preset(c)) : sched_preset;
        const auto dist = load_distributions(preset, sched_dist);
        s = condition_schedule(dist, c, sched_duration, sched_seed, sched_dist.empty() ? preset : sched_dist);
      }
      write_out(sched_out, [&](std::ostream& o) { write_schedule(o, s); });
    };
  });

  // page synth | preset | shard
  auto* page_cmd = app.add_subcommand("page", "Synthetic pages (page/v1)");
  page_cmd->require_subcommand(1);
  SynthParams synth;
  std::vector<std::string> groups;
  std::optional<std::uint64_t> synth_total;
  std::string page_out = "-";
  auto* page_synth = page_cmd->add_subcommand("synth", "Synthesize a page from object groups");
  page_synth->add_option("--name", synth.name, "Page name")->capture_default_str();
  page_synth->add_option("--html", synth.html_size, "Base HTML bytes")->required();
  page_synth->add_option("--group", groups, "count:law:lo:hi[:stretch], repeatable")->required();
  page_synth->add_option("--total", synth_total, "Page bytes including HTML");
  page_synth->add_option("--host", synth.hostname, "Base hostname")->capture_default_str();
  page_synth->add_option("-o,--output", page_out, "Output file, '-' for stdout");
  page_synth->callback([&] {
    action = [&] {
      for (const auto& g : groups) synth.groups.push_back(parse_group(g));
      synth.total = synth_total;
      const auto page = synth_page(synth);
      write_out(page_out, [&](std::ostream& o) { write_page(o, page); });
    };
  });

  std::string preset_name;
  auto* page_preset = page_cmd->add_subcommand("preset", "Write a built-in page");
  page_preset->add_option("name", preset_name, "P365x1K | P10x435K | M2MB | M8MB | M12MB")->required();
  page_preset->add_option("-o,--output", page_out, "Output file, '-' for stdout");
  page_preset->callback([&] {
    action = [&] {
      const auto page = preset_page(preset_name);
      write_out(page_out, [&](std::ostream& o) { write_page(o, page); });
    };
  });

  std::string shard_in, shard_preset, shard_strategy;
  auto* page_shard = page_cmd->add_subcommand("shard", "Reassign objects to hostnames");
  auto* shard_file_opt = page_shard->add_option("--page", shard_in, "page/v1 file");
  page_shard->add_option("--preset", shard_preset, "Built-in page name")->excludes(shard_file_opt);
  page_shard->add_option("--strategy", shard_strategy, "none | size:BYTES | preset:A|B|C | rr:K")->required();
  page_shard->add_option("-o,--output", page_out, "Output file, '-' for stdout");
  page_shard->callback([&] {
    action = [&] {
      if (shard_in.empty() && shard_preset.empty()) throw Error("page shard needs --page or --preset");
      const auto page = shard(load_page_arg(shard_preset, shard_in), parse_shard_strategy(shard_strategy));
      write_out(page_out, [&](std::ostream& o) { write_page(o, page); });
    };
  });

  // run
  std::string config_path, run_prefix;
  std::optional<std::size_t> run_trials_opt, run_workers;
  std::optional<std::uint64_t> run_seed;
  std::optional<std::size_t> detail_trial;
  std::string detail_out;
  auto* run_cmd = app.add_subcommand("run", "Run a trial batch; writes PREFIX.csv and PREFIX.json");
  run_cmd->add_option("config", config_path, "Experiment config (JSON)")->required();
  run_cmd->add_option("-o,--output", run_prefix, "Output prefix")->required();
  run_cmd->add_option("--trials", run_trials_opt, "Override trial count");
  run_cmd->add_option("--seed", run_seed, "Override base seed");
  run_cmd->add_option("--workers", run_workers, "Override worker count");
  run_cmd->add_option("--detail", detail_trial, "Also write per-object timings of this trial index");
  run_cmd->add_option("--detail-output", detail_out, "File for --detail (default PREFIX.trialN.csv)");
  run_cmd->callback([&] {
    action = [&] {
      auto in = open_in(config_path);
      auto cfg = read_experiment_config(in);
      if (run_trials_opt) cfg.trials = *run_trials_opt;
      if (run_seed) cfg.base_seed = *run_seed;
      if (run_workers) cfg.workers = *run_workers;
      cfg.validate();
      const auto set = run_trials(cfg);
      write_out(run_prefix + ".csv", [&](std::ostream& o) { write_trials_csv(o, set); });
      write_out(run_prefix + ".json", [&](std::ostream& o) { write_trials_json(o, set); });
      if (detail_trial) {
        if (*detail_trial >= cfg.trials) throw Error("--detail index past the last trial");
        const auto seed = cfg.base_seed + *detail_trial;
        const ScheduleSource source(cfg.schedule, cfg.base_seed);
        const auto result = load_page(experiment_page(cfg), experiment_protocol(cfg), source.for_trial(seed),
                                      experiment_sim_config(cfg), seed);
        const auto path =
            detail_out.empty() ? run_prefix + ".trial" + std::to_string(*detail_trial) + ".csv" : detail_out;
        write_out(path, [&](std::ostream& o) { write_page_load(o, result); });
      }
      print_summary(std::cerr, set);
    };
  });

  // report
  std::vector<std::string> set_paths;
  std::string report_csv;
  auto* report_cmd = app.add_subcommand("report", "Compare trial sets (text on stdout, optional CSV)");
  report_cmd->add_option("sets", set_paths, "trials/v1 JSON files")->required();
  report_cmd->add_option("--csv", report_csv, "Also write the table as CSV");
  report_cmd->callback([&] {
    action = [&] {
      std::vector<TrialSet> sets;
      for (const auto& p : set_paths) {
        auto in = open_in(p);
        sets.push_back(read_trials_json(in));
      }
      const auto report = compare(sets);
      write_report_text(std::cout, report);
      if (!report_csv.empty()) write_out(report_csv, [&](std::ostream& o) { write_report_csv(o, report); });
      for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
    };
  });

  // export-netem
  std::string netem_sched, netem_dev = "eth0", netem_out = "-";
  auto* netem_cmd = app.add_subcommand("export-netem", "Shell script replaying a schedule with tc netem");
  netem_cmd->add_option("schedule", netem_sched, "sched/v1 file")->required();
  netem_cmd->add_option("--device", netem_dev, "Network interface")->capture_default_str();
  netem_cmd->add_option("-o,--output", netem_out, "Output file, '-' for stdout");
  netem_cmd->callback([&] {
    action = [&] {
      auto in = open_in(netem_sched);
      const auto s = read_schedule(in);
      write_out(netem_out, [&](std::ostream& o) { o << export_netem_script(s, netem_dev); });
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << '\n';
    return 2;
  }

  try {
    if (action) action();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
