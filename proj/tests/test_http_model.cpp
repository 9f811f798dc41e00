#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "h2shard/error.hpp"
#include "h2shard/http_model.hpp"
#include "h2shard/pages.hpp"
#include "h2shard/schedule.hpp"

using namespace h2shard;

namespace {

PageSpec equal_objects(std::size_t n, std::uint64_t size) {
  PageSpec p;
  p.name = "equal";
  p.html_size = 1000;
  p.hostnames = {"host0"};
  for (std::size_t i = 0; i < n; ++i) p.objects.push_back({i, size, "host0"});
  return p;
}

ProtocolConfig proto(Protocol p) {
  ProtocolConfig c;
  c.protocol = p;
  return c;
}

netsim::SimConfig tcp_only() {
  netsim::SimConfig c;
  c.tls_rtts = 0;
  return c;
}

}  // namespace

TEST_CASE("base HTML only page loads in two round trips") {
  PageSpec p;
  p.name = "html";
  p.html_size = 1200;
  p.hostnames = {"host0"};
  const auto sched = constant_schedule(100, INFINITY, 0);
  for (auto pr : {Protocol::h1, Protocol::h2}) {
    const auto r = load_page(p, proto(pr), sched, tcp_only(), 1);
    CHECK(r.converged);
    CHECK(std::abs(r.plt_ms - 200) < 1);
    CHECK(r.connections_opened() == 1);
  }
}

TEST_CASE("h1 waits for a free connection for the seventh object") {
  const auto page = equal_objects(7, 50'000);
  const auto r = load_page(page, proto(Protocol::h1), constant_schedule(100, 1e6, 0), tcp_only(), 1);
  REQUIRE(r.converged);
  CHECK(r.connections_opened() == 6);
  CHECK(r.max_outstanding_per_conn == 1);
  std::vector<double> finished;
  for (std::size_t i = 0; i < 6; ++i) finished.push_back(*r.objects[i].last_byte_ms);
  const double first_free = *std::min_element(finished.begin(), finished.end());
  REQUIRE(r.objects[6].request_ms);
  CHECK(*r.objects[6].request_ms >= first_free);
  for (std::size_t i = 0; i < 6; ++i) CHECK(*r.objects[i].request_ms < *r.objects[6].request_ms);
}

TEST_CASE("h2 opens one connection per host") {
  for (const auto name : kPresetPages) {
    const auto r = load_page(preset_page(name), proto(Protocol::h2), constant_schedule(70, 1e6, 0), {}, 1);
    CHECK(r.connections_opened() == 1);
    CHECK(r.converged);
  }
  const auto sharded = shard(preset_page("M8MB"), ShardStrategy::preset_type('B'));
  const auto r = load_page(sharded, proto(Protocol::h2), constant_schedule(70, 1e6, 0), {}, 1);
  CHECK(r.connections_opened() == 13);
}

TEST_CASE("first flight accounting") {
  const netsim::SimConfig cfg;
  PageSpec small = equal_objects(365, kKiB);
  CHECK(first_flight_report(small, proto(Protocol::h1), cfg) == 6 * 1024);
  CHECK(first_flight_report(small, proto(Protocol::h2), cfg) == 14'600);
  CHECK(first_flight_report(preset_page("P365x1K"), proto(Protocol::h1), cfg) == 6 * 1024);
  CHECK(first_flight_report(preset_page("P365x1K"), proto(Protocol::h2), cfg) == 14'600);
  CHECK(first_flight_report(preset_page("P10x435K"), proto(Protocol::h1), cfg) == 87'600);
  CHECK(first_flight_report(preset_page("P10x435K"), proto(Protocol::h2), cfg) == 14'600);
}

TEST_CASE("bytes are conserved and windows respected under loss") {
  netsim::SimConfig cfg;
  cfg.record_events = true;
  const auto d = synthetic_distributions("paper-poor");
  for (const auto name : {"P365x1K", "M2MB"}) {
    for (auto pr : {Protocol::h1, Protocol::h2}) {
      const auto page = preset_page(name);
      const auto sched = condition_schedule(d, ConditionClass::poor, 60'000, 3);
      const auto r = load_page(page, proto(pr), sched, cfg, 3);
      CAPTURE(name);
      REQUIRE(r.converged);
      std::uint64_t written = 0, delivered = 0;
      for (const auto& c : r.connections) {
        written += c.bytes;
        delivered += c.bytes_delivered;
      }
      CHECK(written == page.total_bytes() + r.overhead_bytes);
      CHECK(delivered == written);
      if (pr == Protocol::h1) CHECK(r.overhead_bytes == 0);
      CHECK_FALSE(r.window_violation);
      for (const auto& o : r.objects) {
        REQUIRE(o.last_byte_ms);
        CHECK(*o.first_byte_ms <= *o.last_byte_ms);
        CHECK(*o.last_byte_ms <= r.plt_ms);
      }
    }
  }
}

TEST_CASE("h2 framing overhead") {
  const auto page = equal_objects(3, 3000);
  const auto r = load_page(page, proto(Protocol::h2), constant_schedule(100, 1e6, 0), {}, 1);
  // HTML: 1 DATA frame; each object: 3 DATA frames of at most one mss.
  const std::uint64_t expected = 4 * 32 + 9 * (1 + 3 * 3);
  CHECK(r.overhead_bytes == expected);
}

TEST_CASE("unknown hostname is rejected") {
  auto page = equal_objects(2, 1000);
  page.objects[1].hostname = "elsewhere";
  CHECK_THROWS_AS(load_page(page, proto(Protocol::h2), constant_schedule(100, 1e6, 0), {}, 1), Error);
}

TEST_CASE("page load CSV") {
  const auto page = equal_objects(2, 2000);
  const auto r = load_page(page, proto(Protocol::h1), constant_schedule(100, 1e6, 0), {}, 1);
  std::ostringstream out;
  write_page_load(out, r);
  std::istringstream in(out.str());
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] == "row,id,hostname,size,conn,request_ms,first_byte_ms,last_byte_ms");
  CHECK(lines[1].rfind("html,", 0) == 0);
  CHECK(lines[2].rfind("object,0,host0,2000,", 0) == 0);
  CHECK(lines[4].rfind("summary,", 0) == 0);
}

TEST_CASE("protocol names") {
  CHECK(parse_protocol("h1") == Protocol::h1);
  CHECK(parse_protocol("h2") == Protocol::h2);
  CHECK_THROWS_AS(parse_protocol("h3"), Error);
}
