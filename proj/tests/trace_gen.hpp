#pragma once

// Synthetic packet logs with retransmissions placed in chosen 70 ms windows,
// plus the expected characterization computed without the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "h2shard/packet_log.hpp"

namespace testgen {

struct GenTrace {
  std::string key;
  std::int64_t start_us = 0;
  std::int64_t handshake_us = 70'000;
  std::size_t windows = 10;
  std::map<std::size_t, std::size_t> retx;  // window -> retransmissions injected
};

inline std::vector<h2shard::PacketRecord> generate(const GenTrace& g) {
  using namespace h2shard;
  std::vector<PacketRecord> out;
  const auto t0 = g.start_us;
  PacketRecord syn{t0, g.key, Direction::to_server, 0, 0, {true, false, false, false}, 0};
  out.push_back(syn);
  PacketRecord synack{t0 + g.handshake_us, g.key, Direction::to_client, 0, 0, {true, true, false, false}, 1};
  out.push_back(synack);
  std::uint64_t seq = 0;
  for (std::size_t w = 0; w < g.windows; ++w) {
    const auto base = t0 + static_cast<std::int64_t>(w) * 70'000;
    // Seven fresh segments at 5, 15, ... 65 ms into the window.
    for (int k = 0; k < 7; ++k) {
      out.push_back({base + 5'000 + k * 10'000, g.key, Direction::to_client, seq, 1460, {false, true, false, false}, 1});
      seq += 1460;
    }
    // Pure ACKs at 20 and 60 ms.
    out.push_back({base + 20'000, g.key, Direction::to_server, 1, 0, {false, true, false, false}, seq});
    out.push_back({base + 60'000, g.key, Direction::to_server, 1, 0, {false, true, false, false}, seq});
    auto it = g.retx.find(w);
    if (it == g.retx.end()) continue;
    // Resend already-sent bytes, one segment per millisecond after 6 ms.
    for (std::size_t r = 0; r < it->second; ++r) {
      out.push_back({base + 6'000 + static_cast<std::int64_t>(r) * 1'000, g.key, Direction::to_client, 0, 1460,
                     {false, true, false, false}, 1});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.timestamp_us < b.timestamp_us; });
  return out;
}

struct Expected {
  std::vector<double> event_ms;
  std::vector<double> gaps_ms;
  std::optional<std::string> condition;  // "Good" / "Median" / "Poor"
};

inline Expected expected(const GenTrace& g) {
  Expected e;
  for (const auto& [w, n] : g.retx) {
    if (n > 0) e.event_ms.push_back(70.0 * static_cast<double>(w + 1));
  }
  for (std::size_t i = 1; i < e.event_ms.size(); ++i) e.gaps_ms.push_back(e.event_ms[i] - e.event_ms[i - 1]);
  if (e.gaps_ms.empty()) return e;
  auto sorted = e.gaps_ms;
  std::sort(sorted.begin(), sorted.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.5 * static_cast<double>(sorted.size())));
  const double med = sorted[rank - 1];
  e.condition = med < 250 ? "Poor" : med < 750 ? "Median" : "Good";
  return e;
}

}  // namespace testgen
