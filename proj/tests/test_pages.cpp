#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "h2shard/error.hpp"
#include "h2shard/pages.hpp"

using namespace h2shard;

namespace {

bool same_objects(const PageSpec& a, const PageSpec& b) {
  if (a.objects.size() != b.objects.size() || a.html_size != b.html_size) return false;
  for (std::size_t i = 0; i < a.objects.size(); ++i) {
    if (a.objects[i].id != b.objects[i].id || a.objects[i].size != b.objects[i].size) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("preset pages") {
  const auto p = preset_page("P365x1K");
  CHECK(p.objects.size() == 365);
  CHECK(std::all_of(p.objects.begin(), p.objects.end(), [](const auto& o) { return o.size == 1024; }));

  const auto big = preset_page("P10x435K");
  CHECK(big.objects.size() == 10);
  CHECK(std::all_of(big.objects.begin(), big.objects.end(), [](const auto& o) { return o.size == 435'000; }));

  const std::pair<const char*, double> mixed[] = {{"M2MB", 2e6}, {"M8MB", 8e6}, {"M12MB", 12e6}};
  for (const auto& [name, total] : mixed) {
    const auto m = preset_page(name);
    CAPTURE(name);
    CHECK(m.objects.size() == 136);
    CHECK(std::abs(static_cast<double>(m.total_bytes()) - total) <= 0.01 * total);
    m.validate();
  }
  CHECK(preset_page("M8MB").count_at_least(kLargeObjectThreshold) == 12);
  CHECK(preset_page("M12MB").count_at_least(kLargeObjectThreshold) == 18);
  CHECK_THROWS_AS(preset_page("P1"), Error);
}

TEST_CASE("sharding strategies") {
  const auto m8 = preset_page("M8MB");
  SUBCASE("type B isolates all twelve large objects") {
    const auto s = shard(m8, ShardStrategy::preset_type('B'));
    CHECK(s.hostnames.size() == 13);
    CHECK(same_objects(s, m8));
    for (const auto& o : s.objects) {
      if (o.size < kLargeObjectThreshold) CHECK(o.hostname == s.hostnames.front());
    }
    std::set<std::string> large_hosts;
    for (const auto& o : s.objects) {
      if (o.size >= kLargeObjectThreshold) large_hosts.insert(o.hostname);
    }
    CHECK(large_hosts.size() == 12);
  }
  SUBCASE("types A and C isolate the largest objects") {
    for (auto [type, n] : {std::pair{'A', 2}, std::pair{'C', 5}}) {
      const auto s = shard(m8, ShardStrategy::preset_type(type));
      CHECK(s.hostnames.size() == static_cast<std::size_t>(n) + 1);
      std::vector<std::uint64_t> sizes;
      for (const auto& o : m8.objects) sizes.push_back(o.size);
      std::sort(sizes.rbegin(), sizes.rend());
      std::uint64_t isolated_min = UINT64_MAX;
      for (const auto& o : s.objects) {
        if (o.hostname != s.hostnames.front()) isolated_min = std::min(isolated_min, o.size);
      }
      CHECK(isolated_min == sizes[static_cast<std::size_t>(n) - 1]);
    }
  }
  SUBCASE("type B needs twelve large objects") {
    CHECK_THROWS_WITH_AS(shard(preset_page("M2MB"), ShardStrategy::preset_type('B')),
                         doctest::Contains("needs at least 12 large objects"), Error);
  }
  SUBCASE("threshold above every object keeps one hostname") {
    std::uint64_t max_size = 0;
    for (const auto& o : m8.objects) max_size = std::max(max_size, o.size);
    const auto s = shard(m8, ShardStrategy::by_size(max_size + 1));
    CHECK(s.hostnames.size() == 1);
    CHECK(same_objects(s, m8));
  }
  SUBCASE("round robin") {
    const auto s = shard(preset_page("P10x435K"), ShardStrategy::round_robin(10));
    CHECK(s.hostnames.size() == 10);
    std::set<std::string> hosts;
    for (const auto& o : s.objects) hosts.insert(o.hostname);
    CHECK(hosts.size() == 10);
    const auto three = shard(preset_page("P10x435K"), ShardStrategy::round_robin(3));
    for (std::size_t i = 0; i < three.objects.size(); ++i) CHECK(three.objects[i].hostname == three.hostnames[i % 3]);
  }
  SUBCASE("strategy text") {
    for (const char* text : {"none", "size:30000", "preset:A", "preset:C", "rr:6"}) {
      CHECK(to_string(parse_shard_strategy(text)) == text);
    }
    CHECK_THROWS_AS(parse_shard_strategy("preset:D"), Error);
    CHECK_THROWS_AS(parse_shard_strategy("rr:0"), Error);
    CHECK_THROWS_AS(parse_shard_strategy("bogus"), Error);
  }
}

TEST_CASE("page synthesis") {
  SynthParams empty;
  empty.html_size = 5000;
  const auto e = synth_page(empty);
  CHECK(e.objects.empty());
  CHECK(e.total_bytes() == 5000);

  SynthParams ten;
  ten.name = "ten";
  ten.html_size = 10'000;
  ten.groups.push_back({10, {SizeLaw::Kind::uniform, 435'000, 435'000}, false});
  CHECK(same_objects(synth_page(ten), preset_page("P10x435K")));

  SynthParams mixed;
  mixed.html_size = 20'000;
  mixed.groups.push_back({50, {SizeLaw::Kind::geometric, 100, 8000}, false});
  mixed.groups.push_back({4, {SizeLaw::Kind::geometric, 40'000, 400'000}, true});
  mixed.total = 3'000'000;
  const auto a = synth_page(mixed);
  const auto b = synth_page(mixed);
  CHECK(a == b);
  CHECK(a.objects.size() == 54);
  CHECK(a.total_bytes() == 3'000'000);

  mixed.groups.back().stretch = false;
  CHECK_THROWS_AS(synth_page(mixed), Error);
}

TEST_CASE("page file round trip") {
  const auto s = shard(preset_page("M12MB"), ShardStrategy::preset_type('C'));
  std::ostringstream out;
  write_page(out, s);
  std::istringstream in(out.str());
  CHECK(read_page(in) == s);

  std::istringstream bad("page/v1\nname=x\n");
  CHECK_THROWS_AS(read_page(bad), Error);
}
