#include "h2shard/pages.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <tuple>

#include "h2shard/error.hpp"
#include "h2shard/text_format.hpp"

namespace h2shard {
namespace {

std::vector<std::uint64_t> group_sizes(const ObjectGroup& g, double raise, double scale) {
  std::vector<std::uint64_t> out;
  out.reserve(g.count);
  const double lo = static_cast<double>(g.law.lo);
  const double hi = static_cast<double>(g.law.hi);
  for (std::size_t k = 0; k < g.count; ++k) {
    double v = lo;
    if (g.law.kind == SizeLaw::Kind::geometric) {
      const double low = lo * std::pow(hi / lo, raise);
      const double t = g.count == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(g.count - 1);
      v = low * std::pow(hi / low, t);
    }
    out.push_back(std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(v * scale))));
  }
  return out;
}

std::uint64_t sum(const std::vector<std::vector<std::uint64_t>>& groups) {
  std::uint64_t total = 0;
  for (const auto& g : groups) total = std::accumulate(g.begin(), g.end(), total);
  return total;
}

std::vector<std::vector<std::uint64_t>> all_sizes(const SynthParams& p, double raise, double scale) {
  std::vector<std::vector<std::uint64_t>> out;
  for (const auto& g : p.groups) out.push_back(g.stretch ? group_sizes(g, raise, scale) : group_sizes(g, 0, 1));
  return out;
}

std::string shard_hostname(std::size_t i) { return "shard" + std::to_string(i); }

}  // namespace

std::uint64_t PageSpec::object_bytes() const {
  std::uint64_t total = 0;
  for (const auto& o : objects) total += o.size;
  return total;
}

std::uint64_t PageSpec::total_bytes() const { return html_size + object_bytes(); }

std::size_t PageSpec::count_at_least(std::uint64_t threshold) const {
  return static_cast<std::size_t>(
      std::count_if(objects.begin(), objects.end(), [threshold](const ObjectSpec& o) { return o.size >= threshold; }));
}

void PageSpec::validate() const {
  if (hostnames.empty()) throw Error("page '" + name + "' has no hostnames");
  const std::set<std::string> hosts(hostnames.begin(), hostnames.end());
  if (hosts.size() != hostnames.size()) throw Error("page '" + name + "' lists a hostname twice");
  if (html_size == 0) throw Error("page '" + name + "' has an empty base HTML");
  std::set<std::size_t> ids;
  for (const auto& o : objects) {
    if (o.size < 1) throw Error("object " + std::to_string(o.id) + " has size 0");
    if (!hosts.contains(o.hostname)) {
      throw Error("object " + std::to_string(o.id) + " uses unknown hostname '" + o.hostname + "'");
    }
    if (!ids.insert(o.id).second) throw Error("object id " + std::to_string(o.id) + " repeated");
  }
}

PageSpec synth_page(const SynthParams& params) {
  for (const auto& g : params.groups) {
    if (g.law.lo < 1 || g.law.hi < g.law.lo) throw Error("size law needs 1 <= lo <= hi");
  }
  double raise = 0;
  double scale = 1;
  auto sizes = all_sizes(params, 0, 1);
  if (params.total) {
    const double target = static_cast<double>(*params.total) - static_cast<double>(params.html_size);
    const bool can_stretch = std::any_of(params.groups.begin(), params.groups.end(),
                                         [](const ObjectGroup& g) { return g.stretch && g.count > 0; });
    const auto at = [&](double r, double s) { return static_cast<double>(sum(all_sizes(params, r, s))); };
    if (can_stretch && target > at(0, 1)) {
      if (target <= at(1, 1)) {
        double lo = 0, hi = 1;
        for (int i = 0; i < 60; ++i) {
          const double mid = 0.5 * (lo + hi);
          (at(mid, 1) < target ? lo : hi) = mid;
        }
        raise = hi;
      } else {
        raise = 1;
        double lo = 1, hi = 2;
        while (at(1, hi) < target) hi *= 2;
        for (int i = 0; i < 60; ++i) {
          const double mid = 0.5 * (lo + hi);
          (at(1, mid) < target ? lo : hi) = mid;
        }
        scale = hi;
      }
      sizes = all_sizes(params, raise, scale);
    }
    const double got = static_cast<double>(sum(sizes));
    const double page_target = static_cast<double>(*params.total);
    if (std::abs(got + static_cast<double>(params.html_size) - page_target) > 0.01 * page_target) {
      throw Error("total of " + std::to_string(*params.total) + " bytes is infeasible for the requested objects");
    }
    // Rounding residue goes to the largest stretchable object.
    if (can_stretch) {
      std::uint64_t* largest = nullptr;
      for (std::size_t g = 0; g < params.groups.size(); ++g) {
        if (!params.groups[g].stretch) continue;
        for (auto& s : sizes[g]) {
          if (!largest || s >= *largest) largest = &s;
        }
      }
      const auto residue = static_cast<std::int64_t>(std::llround(target - got));
      if (largest && static_cast<std::int64_t>(*largest) + residue >= 1) {
        *largest = static_cast<std::uint64_t>(static_cast<std::int64_t>(*largest) + residue);
      }
    }
  }

  // Spread every group evenly over the object order.
  struct Slot {
    double position;
    std::size_t group;
    std::size_t k;
  };
  std::vector<Slot> slots;
  for (std::size_t g = 0; g < params.groups.size(); ++g) {
    const auto n = params.groups[g].count;
    for (std::size_t k = 0; k < n; ++k) {
      slots.push_back({(static_cast<double>(k) + 0.5) / static_cast<double>(n), g, k});
    }
  }
  std::stable_sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) {
    return std::tie(a.position, a.group) < std::tie(b.position, b.group);
  });

  PageSpec page;
  page.name = params.name;
  page.html_size = params.html_size;
  page.hostnames = {params.hostname};
  for (std::size_t i = 0; i < slots.size(); ++i) {
    page.objects.push_back({i, sizes[slots[i].group][slots[i].k], params.hostname});
  }
  page.validate();
  return page;
}

PageSpec preset_page(std::string_view name) {
  SynthParams p;
  p.name = std::string(name);
  const SizeLaw small{SizeLaw::Kind::geometric, 20, 5 * kKB};
  const SizeLaw large{SizeLaw::Kind::geometric, 30 * kKB, 620 * kKB};
  if (name == "P365x1K") {
    p.html_size = 38 * kKB;
    p.groups = {{365, {SizeLaw::Kind::uniform, kKiB, kKiB}, false}};
  } else if (name == "P10x435K") {
    p.html_size = 10 * kKB;
    p.groups = {{10, {SizeLaw::Kind::uniform, 435 * kKB, 435 * kKB}, false}};
  } else if (name == "M2MB") {
    p.html_size = 30 * kKB;
    p.groups = {{133, small, false}, {3, large, true}};
    p.total = 2 * kMB;
  } else if (name == "M8MB") {
    p.html_size = 30 * kKB;
    p.groups = {{124, small, false}, {12, large, true}};
    p.total = 8 * kMB;
  } else if (name == "M12MB") {
    p.html_size = 30 * kKB;
    p.groups = {{118, small, false}, {18, large, true}};
    p.total = 12 * kMB;
  } else {
    throw Error("unknown preset page '" + std::string(name) + "'");
  }
  return synth_page(p);
}

ShardStrategy parse_shard_strategy(std::string_view text) {
  if (text == "none") return ShardStrategy::none();
  const auto colon = text.find(':');
  const auto kind = text.substr(0, colon);
  const auto arg = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
  if (kind == "size") {
    const auto t = text::parse_uint(arg, "shard threshold");
    if (t < 1) throw Error("shard threshold must be at least 1 byte");
    return ShardStrategy::by_size(t);
  }
  if (kind == "preset") {
    if (arg != "A" && arg != "B" && arg != "C") throw Error("shard preset must be A, B or C");
    return ShardStrategy::preset_type(arg.front());
  }
  if (kind == "rr") {
    const auto k = text::parse_uint(arg, "shard host count");
    if (k < 1) throw Error("round-robin sharding needs at least one host");
    return ShardStrategy::round_robin(k);
  }
  throw Error("unknown shard strategy '" + std::string(text) + "'");
}

std::string to_string(const ShardStrategy& s) {
  switch (s.kind) {
    case ShardStrategy::Kind::none: return "none";
    case ShardStrategy::Kind::by_size: return "size:" + std::to_string(s.threshold);
    case ShardStrategy::Kind::preset: return std::string("preset:") + s.preset;
    case ShardStrategy::Kind::round_robin: return "rr:" + std::to_string(s.hosts);
  }
  return "none";
}

PageSpec shard(const PageSpec& page, const ShardStrategy& strategy) {
  page.validate();
  PageSpec out = page;
  const std::string base = page.hostnames.front();
  out.hostnames = {base};

  auto isolate = [&](const std::vector<std::size_t>& positions) {
    std::set<std::size_t> chosen(positions.begin(), positions.end());
    std::size_t next = 1;
    for (std::size_t i = 0; i < out.objects.size(); ++i) {
      if (chosen.contains(i)) {
        out.objects[i].hostname = shard_hostname(next++);
        out.hostnames.push_back(out.objects[i].hostname);
      } else {
        out.objects[i].hostname = base;
      }
    }
  };
  auto largest = [&](std::size_t n) {
    std::vector<std::size_t> order(page.objects.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return page.objects[a].size > page.objects[b].size;
    });
    order.resize(std::min(n, order.size()));
    return order;
  };

  switch (strategy.kind) {
    case ShardStrategy::Kind::none:
      return page;
    case ShardStrategy::Kind::by_size: {
      if (strategy.threshold < 1) throw Error("shard threshold must be at least 1 byte");
      std::vector<std::size_t> picked;
      for (std::size_t i = 0; i < page.objects.size(); ++i) {
        if (page.objects[i].size >= strategy.threshold) picked.push_back(i);
      }
      isolate(picked);
      break;
    }
    case ShardStrategy::Kind::preset: {
      const auto large = page.count_at_least(strategy.threshold);
      const std::size_t need = strategy.preset == 'A' ? 2 : strategy.preset == 'C' ? 5 : 12;
      if (strategy.preset != 'A' && strategy.preset != 'B' && strategy.preset != 'C') {
        throw Error("shard preset must be A, B or C");
      }
      if (large < need) {
        throw Error(std::string("sharding type ") + strategy.preset + " needs at least " + std::to_string(need) +
                    " large objects, page has " + std::to_string(large));
      }
      isolate(largest(strategy.preset == 'B' ? large : need));
      break;
    }
    case ShardStrategy::Kind::round_robin: {
      if (strategy.hosts < 1) throw Error("round-robin sharding needs at least one host");
      for (std::size_t h = 1; h < strategy.hosts; ++h) out.hostnames.push_back(shard_hostname(h));
      for (std::size_t i = 0; i < out.objects.size(); ++i) {
        out.objects[i].hostname = out.hostnames[i % strategy.hosts];
      }
      break;
    }
  }
  out.validate();
  return out;
}

void write_page(std::ostream& out, const PageSpec& page) {
  out << kPageSchema << '\n';
  out << "name=" << page.name << '\n';
  out << "html_size=" << page.html_size << '\n';
  out << "hostnames=";
  for (std::size_t i = 0; i < page.hostnames.size(); ++i) out << (i ? "," : "") << page.hostnames[i];
  out << '\n';
  out << "id,size,hostname\n";
  for (const auto& o : page.objects) out << o.id << ',' << o.size << ',' << o.hostname << '\n';
}

PageSpec read_page(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != kPageSchema) {
    throw Error(std::string("page file lacks schema ") + kPageSchema);
  }
  PageSpec page;
  std::map<std::string, std::string, std::less<>> header;
  bool in_rows = false;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto view = text::trim(line);
    if (view.empty()) continue;
    if (!in_rows) {
      if (view == "id,size,hostname") {
        in_rows = true;
        continue;
      }
      const auto eq = view.find('=');
      if (eq == std::string_view::npos) throw Error("page line " + std::to_string(line_no) + ": expected key=value");
      header.emplace(std::string(view.substr(0, eq)), std::string(view.substr(eq + 1)));
      continue;
    }
    const auto f = text::split(view, ',');
    if (f.size() != 3) throw Error("page line " + std::to_string(line_no) + ": expected 3 fields");
    try {
      page.objects.push_back({text::parse_uint(f[0], "id"), text::parse_uint(f[1], "size"),
                              std::string(text::trim(f[2]))});
    } catch (const Error& e) {
      throw Error("page line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  auto get = [&header](const char* key) {
    auto it = header.find(key);
    if (it == header.end()) throw Error(std::string("page header missing '") + key + "'");
    return it->second;
  };
  page.name = get("name");
  page.html_size = text::parse_uint(get("html_size"), "html_size");
  const auto hosts = get("hostnames");
  for (auto h : text::split(hosts, ',')) page.hostnames.emplace_back(text::trim(h));
  page.validate();
  return page;
}

}  // namespace h2shard
