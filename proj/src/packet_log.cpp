#include "h2shard/packet_log.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <string_view>
#include <tuple>

#include "h2shard/error.hpp"
#include "h2shard/text_format.hpp"

namespace h2shard {
namespace {

[[noreturn]] void fail(std::size_t line_no, std::string_view field, const std::string& detail) {
  throw Error("packet log line " + std::to_string(line_no) + ": field '" + std::string(field) +
              "': " + detail);
}

std::int64_t parse_timestamp(std::string_view field, std::size_t line_no) {
  field = text::trim(field);
  const auto dot = field.find('.');
  const auto whole = field.substr(0, dot);
  std::string_view frac = dot == std::string_view::npos ? std::string_view{} : field.substr(dot + 1);
  if (whole.empty() || frac.size() > 6) fail(line_no, "timestamp", "expected seconds with up to 6 decimals");
  for (char c : whole) {
    if (c < '0' || c > '9') fail(line_no, "timestamp", "not a non-negative number '" + std::string(field) + "'");
  }
  for (char c : frac) {
    if (c < '0' || c > '9') fail(line_no, "timestamp", "not a non-negative number '" + std::string(field) + "'");
  }
  std::int64_t us = 0;
  for (char c : whole) us = us * 10 + (c - '0');
  us *= 1'000'000;
  std::int64_t scale = 100'000;
  for (char c : frac) {
    us += (c - '0') * scale;
    scale /= 10;
  }
  return us;
}

std::uint64_t parse_count(std::string_view field, std::string_view name, std::size_t line_no) {
  field = text::trim(field);
  if (!field.empty() && field.front() == '-') fail(line_no, name, "negative value '" + std::string(field) + "'");
  try {
    return text::parse_uint(field, name);
  } catch (const Error&) {
    fail(line_no, name, "not an unsigned integer '" + std::string(field) + "'");
  }
}

TcpFlags parse_flags(std::string_view field, std::size_t line_no) {
  TcpFlags flags;
  field = text::trim(field);
  if (field.empty()) return flags;
  for (auto part : text::split(field, '|')) {
    part = text::trim(part);
    if (part == "SYN") {
      flags.syn = true;
    } else if (part == "ACK") {
      flags.ack = true;
    } else if (part == "FIN") {
      flags.fin = true;
    } else if (part == "RST") {
      flags.rst = true;
    } else {
      fail(line_no, "flags", "unknown flag '" + std::string(part) + "'");
    }
  }
  return flags;
}

}  // namespace

std::string format_flags(const TcpFlags& flags) {
  std::string out;
  auto add = [&out](const char* name) {
    if (!out.empty()) out += '|';
    out += name;
  };
  if (flags.syn) add("SYN");
  if (flags.ack) add("ACK");
  if (flags.fin) add("FIN");
  if (flags.rst) add("RST");
  return out;
}

std::string format_timestamp(std::int64_t timestamp_us) {
  std::string frac = std::to_string(timestamp_us % 1'000'000);
  frac.insert(0, 6 - frac.size(), '0');
  return std::to_string(timestamp_us / 1'000'000) + "." + frac;
}

std::vector<PacketRecord> parse_packet_log(std::istream& in) {
  std::vector<PacketRecord> records;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto view = text::trim(line);
    if (view.empty()) continue;
    if (!header_seen) {
      if (view != kPacketLogHeader) fail(line_no, "header", "expected '" + std::string(kPacketLogHeader) + "'");
      header_seen = true;
      continue;
    }
    const auto fields = text::split(view, ',');
    if (fields.size() != 7) {
      fail(line_no, "record", "expected 7 fields, got " + std::to_string(fields.size()));
    }
    PacketRecord rec;
    rec.timestamp_us = parse_timestamp(fields[0], line_no);
    rec.conn_key = std::string(text::trim(fields[1]));
    if (rec.conn_key.empty()) fail(line_no, "conn_key", "empty");
    const auto dir = text::trim(fields[2]);
    if (dir == "toClient") {
      rec.direction = Direction::to_client;
    } else if (dir == "toServer") {
      rec.direction = Direction::to_server;
    } else {
      fail(line_no, "direction", "expected toClient or toServer, got '" + std::string(dir) + "'");
    }
    rec.seq = parse_count(fields[3], "seq", line_no);
    rec.payload_len = parse_count(fields[4], "payload_len", line_no);
    rec.flags = parse_flags(fields[5], line_no);
    rec.ack = parse_count(fields[6], "ack", line_no);
    records.push_back(std::move(rec));
  }
  return records;
}

void write_packet_log(std::ostream& out, std::span<const PacketRecord> records) {
  out << kPacketLogHeader << '\n';
  for (const auto& r : records) {
    out << format_timestamp(r.timestamp_us) << ',' << r.conn_key << ','
        << (r.direction == Direction::to_client ? "toClient" : "toServer") << ',' << r.seq << ','
        << r.payload_len << ',' << format_flags(r.flags) << ',' << r.ack << '\n';
  }
}

AssembledTraces assemble_connections(std::span<const PacketRecord> records) {
  std::map<std::string, std::vector<PacketRecord>> by_key;
  for (const auto& r : records) by_key[r.conn_key].push_back(r);

  AssembledTraces out;
  for (auto& [key, recs] : by_key) {
    // Full ordering so shuffled input yields identical traces.
    std::sort(recs.begin(), recs.end(), [](const PacketRecord& a, const PacketRecord& b) {
      return std::tie(a.timestamp_us, a.direction, a.seq, a.payload_len, a.ack, a.flags.syn, a.flags.ack,
                      a.flags.fin, a.flags.rst) < std::tie(b.timestamp_us, b.direction, b.seq, b.payload_len,
                                                           b.ack, b.flags.syn, b.flags.ack, b.flags.fin,
                                                           b.flags.rst);
    });
    const auto first_to_server = std::find_if(recs.begin(), recs.end(), [](const PacketRecord& r) {
      return r.direction == Direction::to_server;
    });
    if (first_to_server == recs.end() || !first_to_server->flags.syn) {
      ++out.dropped;
      continue;
    }
    ConnectionTrace trace;
    trace.conn_key = key;
    trace.start_us = first_to_server->timestamp_us;
    // Anything captured before the SYN belongs to an earlier incarnation.
    trace.records.assign(first_to_server, recs.end());
    for (const auto& r : trace.records) {
      if (r.direction == Direction::to_client && r.flags.syn && r.flags.ack) {
        trace.syn_to_synack_rtt_ms = static_cast<double>(r.timestamp_us - trace.start_us) / 1000.0;
        break;
      }
    }
    out.traces.push_back(std::move(trace));
  }
  return out;
}

}  // namespace h2shard
