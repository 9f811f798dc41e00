#include "h2shard/http_model.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <memory>
#include <ostream>
#include <set>

#include "h2shard/error.hpp"
#include "h2shard/text_format.hpp"

namespace h2shard {

using netsim::SimTime;
using netsim::Simulator;
using netsim::from_ms;
using netsim::to_ms;

const char* to_string(Protocol p) { return p == Protocol::h1 ? "h1" : "h2"; }

Protocol parse_protocol(std::string_view name) {
  if (name == "h1") return Protocol::h1;
  if (name == "h2") return Protocol::h2;
  throw Error("unknown protocol '" + std::string(name) + "' (expected h1 or h2)");
}

void ProtocolConfig::validate() const {
  if (h1_max_conns_per_host < 1) throw Error("h1 needs at least one connection per host");
  if (h2_conns_per_host < 1) throw Error("h2 needs at least one connection per host");
  if (dns_latency_ms < 0) throw Error("dns latency must be non-negative");
}

namespace {

constexpr std::size_t kHtml = SIZE_MAX;

struct Milestone {
  std::size_t object;
  bool last;  // false: first byte
};

// An h2 response being framed by the server.
struct Stream {
  std::size_t object;
  std::uint64_t remaining;
  bool headers_sent = false;
};

struct Conn {
  std::size_t host = 0;
  bool established = false;
  std::size_t outstanding = 0;
  std::uint64_t written = 0;
  // Offset thresholds: fires once rcv_next >= key.
  std::multimap<std::uint64_t, Milestone> milestones;
  // h2 server side
  std::deque<Stream> streams;
  // h2 objects waiting for the connection to come up
  std::vector<std::size_t> pending;
};

struct Host {
  std::string name;
  bool resolved = false;
  std::vector<std::size_t> conns;
  std::deque<std::size_t> queue;  // h1 objects waiting for a connection
};

class PageLoad {
 public:
  PageLoad(const PageSpec& page, const ProtocolConfig& proto, const EmulationSchedule& schedule,
           const netsim::SimConfig& cfg, std::uint64_t seed)
      : page_(page), proto_(proto), cfg_(cfg), sim_(schedule, cfg, seed) {
    for (const auto& h : page.hostnames) {
      host_index_.emplace(h, hosts_.size());
      hosts_.push_back({h, false, {}, {}});
    }
    result_.page = page.name;
    result_.protocol = proto.protocol;
    result_.html = {0, page.hostnames.front(), page.html_size, 0, {}, {}, {}};
    for (const auto& o : page.objects) {
      result_.objects.push_back({o.id, o.hostname, o.size, 0, {}, {}, {}});
    }
    remaining_ = page.objects.size() + 1;
  }

  PageLoadResult run() {
    const SimTime start = dns(0, 0);
    const auto conn = open(0, start);
    if (h2()) {
      conns_[conn].pending.push_back(kHtml);
    } else {
      hosts_[0].queue.push_back(kHtml);
    }
    const bool finished = sim_.run();
    result_.converged = finished && remaining_ == 0;
    double plt = result_.html.last_byte_ms.value_or(0);
    for (const auto& o : result_.objects) plt = std::max(plt, o.last_byte_ms.value_or(0));
    result_.plt_ms = result_.converged ? plt : to_ms(sim_.now());
    for (std::size_t i = 0; i < conns_.size(); ++i) {
      const auto& st = sim_.stats(i);
      result_.connections.push_back({hosts_[conns_[i].host].name, st.open_ms, st.handshake_done_ms, conns_[i].written,
                                     st.bytes_delivered, st.retransmissions, st.drops,
                                     st.fast_retransmits, st.timeouts});
    }
    if (cfg_.record_events) {
      const double rwnd = cfg_.rwnd;
      for (const auto& e : sim_.events()) {
        if (e.kind == netsim::EventKind::send && static_cast<double>(e.in_flight) > std::min(e.cwnd, rwnd) + 1e-9) {
          result_.window_violation = true;
        }
      }
    }
    return std::move(result_);
  }

 private:
  bool h2() const { return proto_.protocol == Protocol::h2; }

  ObjectTiming& timing(std::size_t object) { return object == kHtml ? result_.html : result_.objects[object]; }
  std::uint64_t size_of(std::size_t object) const {
    return object == kHtml ? page_.html_size : page_.objects[object].size;
  }

  SimTime dns(std::size_t host, SimTime now) {
    if (hosts_[host].resolved) return now;
    hosts_[host].resolved = true;
    return now + from_ms(proto_.dns_latency_ms);
  }

  std::size_t open(std::size_t host, SimTime at) {
    Simulator::Hooks hooks;
    hooks.on_established = [this](Simulator::ConnId id, SimTime) { on_established(id); };
    hooks.on_delivered = [this](Simulator::ConnId id, std::uint64_t rcv_next, SimTime now) {
      on_delivered(id, rcv_next, now);
    };
    if (h2()) hooks.on_refill = [this](Simulator::ConnId id, std::uint64_t want) { refill(id, want); };
    const auto id = sim_.open_connection(at, std::move(hooks));
    if (id != conns_.size()) throw Error("connection id out of step");
    conns_.push_back({});
    conns_.back().host = host;
    hosts_[host].conns.push_back(id);
    return id;
  }

  void on_established(std::size_t conn) {
    auto& c = conns_[conn];
    c.established = true;
    if (h2()) {
      auto pending = std::move(c.pending);
      c.pending.clear();
      for (auto object : pending) request_h2(conn, object);
    } else {
      next_h1(conn);
    }
  }

  // h1: an idle connection takes the next queued object of its host.
  void next_h1(std::size_t conn) {
    auto& c = conns_[conn];
    auto& queue = hosts_[c.host].queue;
    if (!c.established || c.outstanding > 0 || queue.empty()) return;
    const auto object = queue.front();
    queue.pop_front();
    ++c.outstanding;
    result_.max_outstanding_per_conn = std::max(result_.max_outstanding_per_conn, c.outstanding);
    auto& t = timing(object);
    t.conn = conn;
    t.request_ms = to_ms(sim_.now());
    sim_.send_request(conn, [this, conn, object](SimTime) {
      auto& cc = conns_[conn];
      const auto size = size_of(object);
      cc.milestones.emplace(cc.written + 1, Milestone{object, false});
      cc.milestones.emplace(cc.written + size, Milestone{object, true});
      cc.written += size;
      sim_.server_write(conn, size);
    });
  }

  void request_h2(std::size_t conn, std::size_t object) {
    auto& c = conns_[conn];
    auto& t = timing(object);
    t.conn = conn;
    t.request_ms = to_ms(sim_.now());
    ++c.outstanding;
    result_.max_outstanding_per_conn = std::max(result_.max_outstanding_per_conn, c.outstanding);
    sim_.send_request(conn, [this, conn, object](SimTime) {
      conns_[conn].streams.push_back({object, size_of(object)});
      sim_.server_write(conn, 0);  // wakes the sender, which pulls frames
    });
  }

  // h2 server: round-robin over open streams, one mss of payload per turn.
  void refill(std::size_t conn, std::uint64_t want) {
    auto& c = conns_[conn];
    std::uint64_t produced = 0;
    while (produced < want && !c.streams.empty()) {
      Stream s = c.streams.front();
      c.streams.pop_front();
      std::uint64_t frame = 0;
      if (!s.headers_sent) {
        s.headers_sent = true;
        frame += proto_.headers_frame_bytes;
      }
      const auto payload = std::min<std::uint64_t>(s.remaining, cfg_.mss);
      frame += proto_.frame_header_bytes;
      const auto payload_start = c.written + frame;
      if (s.remaining == size_of(s.object)) c.milestones.emplace(payload_start + 1, Milestone{s.object, false});
      frame += payload;
      s.remaining -= payload;
      if (s.remaining == 0) {
        c.milestones.emplace(c.written + frame, Milestone{s.object, true});
      } else {
        c.streams.push_back(s);
      }
      result_.overhead_bytes += frame - payload;
      c.written += frame;
      produced += frame;
      sim_.server_write(conn, frame);
    }
  }

  void on_delivered(std::size_t conn, std::uint64_t rcv_next, SimTime now) {
    auto& c = conns_[conn];
    std::vector<Milestone> fired;
    while (!c.milestones.empty() && c.milestones.begin()->first <= rcv_next) {
      fired.push_back(c.milestones.begin()->second);
      c.milestones.erase(c.milestones.begin());
    }
    for (const auto& m : fired) {
      auto& t = timing(m.object);
      if (!m.last) {
        t.first_byte_ms = to_ms(now);
        continue;
      }
      t.last_byte_ms = to_ms(now);
      --c.outstanding;
      --remaining_;
      if (m.object == kHtml) discover(now);
      if (!h2()) next_h1(conn);
    }
    if (remaining_ == 0) sim_.stop();
  }

  // Base HTML done: every object becomes requestable.
  void discover(SimTime now) {
    std::vector<std::vector<std::size_t>> per_host(hosts_.size());
    for (std::size_t i = 0; i < page_.objects.size(); ++i) {
      const auto it = host_index_.find(page_.objects[i].hostname);
      if (it == host_index_.end()) throw Error("object uses unknown hostname '" + page_.objects[i].hostname + "'");
      per_host[it->second].push_back(i);
    }
    for (std::size_t h = 0; h < hosts_.size(); ++h) {
      const auto& objects = per_host[h];
      if (objects.empty()) continue;
      auto& host = hosts_[h];
      const SimTime at = dns(h, now);
      if (h2()) {
        while (host.conns.size() < proto_.h2_conns_per_host && host.conns.size() < objects.size()) open(h, at);
        for (std::size_t k = 0; k < objects.size(); ++k) {
          const auto conn = host.conns[k % host.conns.size()];
          if (conns_[conn].established) {
            request_h2(conn, objects[k]);
          } else {
            conns_[conn].pending.push_back(objects[k]);
          }
        }
      } else {
        host.queue.insert(host.queue.end(), objects.begin(), objects.end());
        const auto want = std::min(proto_.h1_max_conns_per_host, objects.size());
        while (host.conns.size() < want) open(h, at);
      }
    }
    if (!h2()) {
      for (std::size_t conn = 0; conn < conns_.size(); ++conn) next_h1(conn);
    }
  }

  const PageSpec& page_;
  ProtocolConfig proto_;
  netsim::SimConfig cfg_;
  Simulator sim_;
  std::vector<Host> hosts_;
  std::map<std::string, std::size_t, std::less<>> host_index_;
  std::vector<Conn> conns_;
  std::size_t remaining_ = 0;
  PageLoadResult result_;
};

std::uint64_t h2_overhead(std::uint64_t size, const ProtocolConfig& proto, std::uint32_t mss) {
  const auto frames = std::max<std::uint64_t>(1, (size + mss - 1) / mss);
  return proto.headers_frame_bytes + frames * proto.frame_header_bytes;
}

}  // namespace

PageLoadResult load_page(const PageSpec& page, const ProtocolConfig& proto, const EmulationSchedule& schedule,
                         const netsim::SimConfig& cfg, std::uint64_t seed) {
  page.validate();
  proto.validate();
  cfg.validate();
  schedule.validate();
  PageLoad load(page, proto, schedule, cfg, seed);
  return load.run();
}

std::uint64_t first_flight_report(const PageSpec& page, const ProtocolConfig& proto, const netsim::SimConfig& cfg) {
  page.validate();
  proto.validate();
  const std::uint64_t icw_bytes = static_cast<std::uint64_t>(cfg.icw_segments) * cfg.mss;
  const std::uint64_t window = std::min<std::uint64_t>(icw_bytes, cfg.rwnd);
  std::map<std::string, std::vector<std::uint64_t>, std::less<>> per_host;
  for (const auto& o : page.objects) per_host[o.hostname].push_back(o.size);
  if (per_host.empty()) per_host[page.hostnames.front()].push_back(page.html_size);

  std::uint64_t total = 0;
  for (const auto& [host, sizes] : per_host) {
    if (proto.protocol == Protocol::h1) {
      const auto active = std::min(proto.h1_max_conns_per_host, sizes.size());
      for (std::size_t i = 0; i < active; ++i) total += std::min(window, sizes[i]);
    } else {
      const auto conns = std::min(proto.h2_conns_per_host, sizes.size());
      std::vector<std::uint64_t> queued(conns, 0);
      for (std::size_t i = 0; i < sizes.size(); ++i) {
        queued[i % conns] += sizes[i] + h2_overhead(sizes[i], proto, cfg.mss);
      }
      for (auto q : queued) total += std::min(window, q);
    }
  }
  return total;
}

void write_page_load(std::ostream& out, const PageLoadResult& r) {
  auto opt = [](const std::optional<double>& v) { return v ? text::format_trimmed(*v, 3) : std::string(); };
  auto row = [&](const char* kind, const ObjectTiming& t, const std::string& id) {
    out << kind << ',' << id << ',' << t.hostname << ',' << t.size << ',' << t.conn << ',' << opt(t.request_ms) << ','
        << opt(t.first_byte_ms) << ',' << opt(t.last_byte_ms) << '\n';
  };
  out << "row,id,hostname,size,conn,request_ms,first_byte_ms,last_byte_ms\n";
  row("html", r.html, "");
  for (const auto& o : r.objects) row("object", o, std::to_string(o.id));
  std::uint64_t total = r.html.size;
  for (const auto& o : r.objects) total += o.size;
  out << "summary,,," << total << ',' << r.connections.size() << ",,,"
      << (r.converged ? text::format_trimmed(r.plt_ms, 3) : std::string()) << '\n';
}

}  // namespace h2shard
