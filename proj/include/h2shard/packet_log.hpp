#pragma once

// Packet-event logs and per-connection trace assembly.
//
// Log layout (CSV, header required):
//   timestamp,conn_key,direction,seq,payload_len,flags,ack
// timestamp is seconds with six decimals; flags is a '|'-joined subset of
// SYN,ACK,FIN,RST (empty field for none); direction is toClient or toServer.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace h2shard {

enum class Direction : std::uint8_t { to_client, to_server };

struct TcpFlags {
  bool syn = false;
  bool ack = false;
  bool fin = false;
  bool rst = false;

  friend bool operator==(const TcpFlags&, const TcpFlags&) = default;
};

struct PacketRecord {
  std::int64_t timestamp_us = 0;
  std::string conn_key;
  Direction direction = Direction::to_server;
  std::uint64_t seq = 0;
  std::uint64_t payload_len = 0;
  TcpFlags flags;
  std::uint64_t ack = 0;

  friend bool operator==(const PacketRecord&, const PacketRecord&) = default;
};

struct ConnectionTrace {
  std::string conn_key;
  std::int64_t start_us = 0;
  std::vector<PacketRecord> records;
  std::optional<double> syn_to_synack_rtt_ms;

  std::int64_t end_us() const { return records.empty() ? start_us : records.back().timestamp_us; }
};

struct AssembledTraces {
  std::vector<ConnectionTrace> traces;  // sorted by conn_key
  std::size_t dropped = 0;              // connections without a leading SYN
};

inline constexpr const char* kPacketLogHeader = "timestamp,conn_key,direction,seq,payload_len,flags,ack";

/// Parses a packet log. Throws Error naming the 1-based line number and the
/// offending field on the first malformed line.
std::vector<PacketRecord> parse_packet_log(std::istream& in);

/// Writes records in the same layout parse_packet_log accepts, header included.
void write_packet_log(std::ostream& out, std::span<const PacketRecord> records);

std::string format_flags(const TcpFlags& flags);
std::string format_timestamp(std::int64_t timestamp_us);

/// Groups records per connection, anchors each at its SYN, and drops keys whose
/// first toServer record is not a SYN. Input order does not matter.
AssembledTraces assemble_connections(std::span<const PacketRecord> records);

}  // namespace h2shard
