#pragma once

// h1 and h2 page loads on top of the network simulator.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "h2shard/netsim.hpp"
#include "h2shard/pages.hpp"
#include "h2shard/schedule.hpp"

namespace h2shard {

enum class Protocol { h1, h2 };
const char* to_string(Protocol p);
Protocol parse_protocol(std::string_view name);

struct ProtocolConfig {
  Protocol protocol = Protocol::h2;
  std::size_t h1_max_conns_per_host = 6;
  std::size_t h2_conns_per_host = 1;
  std::uint32_t frame_header_bytes = 9;     // per h2 DATA frame
  std::uint32_t headers_frame_bytes = 32;   // per h2 stream
  double dns_latency_ms = 0;                // once per hostname

  void validate() const;
};

struct ObjectTiming {
  std::size_t id = 0;  // object id; the base HTML is reported separately
  std::string hostname;
  std::uint64_t size = 0;
  std::size_t conn = 0;
  std::optional<double> request_ms;
  std::optional<double> first_byte_ms;
  std::optional<double> last_byte_ms;
};

struct ConnectionTiming {
  std::string hostname;
  double open_ms = 0;
  std::optional<double> handshake_done_ms;
  std::uint64_t bytes = 0;  // payload bytes the server wrote
  std::uint64_t bytes_delivered = 0;
  std::uint64_t retransmissions = 0;
  std::uint64_t drops = 0;
  std::uint64_t fast_retransmits = 0;
  std::uint64_t timeouts = 0;
};

struct PageLoadResult {
  std::string page;
  Protocol protocol = Protocol::h2;
  double plt_ms = 0;
  ObjectTiming html;
  std::vector<ObjectTiming> objects;
  std::vector<ConnectionTiming> connections;
  bool converged = true;
  /// Most responses ever outstanding at once on a single connection.
  std::size_t max_outstanding_per_conn = 0;
  /// Bytes added on top of object payloads (h2 framing).
  std::uint64_t overhead_bytes = 0;
  /// True if some send event saw in-flight > min(cwnd, rwnd). Only checked
  /// when cfg.record_events is set.
  bool window_violation = false;

  std::size_t connections_opened() const { return connections.size(); }
};

/// One simulated page load. The base HTML comes from hostnames.front(); its
/// completion makes every object requestable at once.
PageLoadResult load_page(const PageSpec& page, const ProtocolConfig& proto, const EmulationSchedule& schedule,
                         const netsim::SimConfig& cfg, std::uint64_t seed);

/// Bytes the server(s) can put on the wire in the first round trip after the
/// objects are requested. Analytic, no simulation.
std::uint64_t first_flight_report(const PageSpec& page, const ProtocolConfig& proto, const netsim::SimConfig& cfg);

/// Columns: row,id,hostname,size,conn,request_ms,first_byte_ms,last_byte_ms.
/// One "html" row, one "object" row per object, then a "summary" row whose
/// size column holds total page bytes, conn column the connection count and
/// last_byte_ms the PLT (empty when the load did not converge).
void write_page_load(std::ostream& out, const PageLoadResult& result);

}  // namespace h2shard
