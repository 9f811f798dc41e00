#include "h2shard/netsim.hpp"

#include <algorithm>
#include <ostream>

#include "h2shard/error.hpp"
#include "h2shard/text_format.hpp"

namespace h2shard::netsim {

void SimConfig::validate() const {
  if (mss == 0) throw Error("mss must be positive");
  if (icw_segments < 1) throw Error("icw must be at least one segment");
  if (rwnd < mss) throw Error("rwnd must be at least one mss");
  if (!(beta > 0 && beta < 1)) throw Error("beta must lie in (0, 1)");
  if (dupack_threshold < 1) throw Error("dupack threshold must be positive");
  if (!(initial_rto_ms > 0 && min_rto_ms > 0 && max_rto_ms >= min_rto_ms)) throw Error("invalid RTO bounds");
  if (!(time_limit_ms > 0)) throw Error("time limit must be positive");
}

TcpConnectionState TcpConnectionState::initial(const SimConfig& cfg) {
  TcpConnectionState s;
  s.cwnd = static_cast<double>(cfg.icw_segments) * cfg.mss;
  s.ssthresh = INFINITY;
  s.phase = Phase::slow_start;
  s.rto_ms = cfg.initial_rto_ms;
  return s;
}

void on_loss_detected(TcpConnectionState& s, LossSignal via, const SimConfig& cfg) {
  const double mss = cfg.mss;
  s.ssthresh = std::max(s.cwnd * cfg.beta, 2.0 * mss);
  s.recover = s.snd_max;
  s.dup_acks = 0;
  if (via == LossSignal::dupack) {
    s.cwnd = std::max(s.cwnd * cfg.beta, mss);
    s.phase = Phase::recovery;
  } else {
    s.cwnd = mss;
    s.phase = Phase::slow_start;
    s.rto_ms = std::min(s.rto_ms * 2.0, cfg.max_rto_ms);
  }
}

void window_growth(TcpConnectionState& s, std::uint64_t acked, const SimConfig& cfg) {
  const double cap = cfg.rwnd;
  switch (s.phase) {
    case Phase::recovery:
      return;
    case Phase::slow_start:
      s.cwnd = std::min(s.cwnd + static_cast<double>(acked), cap);
      if (s.cwnd >= s.ssthresh) s.phase = Phase::congestion_avoidance;
      return;
    case Phase::congestion_avoidance:
      s.cwnd = std::min(s.cwnd + cfg.mss * static_cast<double>(acked) / s.cwnd, cap);
      return;
  }
}

const char* to_string(EventKind kind) {
  switch (kind) {
    case EventKind::send: return "send";
    case EventKind::retransmit: return "retransmit";
    case EventKind::drop: return "drop";
    case EventKind::deliver: return "deliver";
    case EventKind::ack: return "ack";
    case EventKind::rto: return "rto";
    case EventKind::epoch_change: return "epoch-change";
  }
  return "?";
}

Simulator::Simulator(const EmulationSchedule& schedule, const SimConfig& cfg, std::uint64_t seed)
    : schedule_(schedule), cfg_(cfg), rng_(seed) {
  schedule_.validate();
  cfg_.validate();
  SimTime t = 0;
  for (const auto& e : schedule_.epochs) {
    epoch_starts_.push_back(t);
    t += from_ms(e.duration_ms);
  }
  cycle_ = t;
  if (cycle_ <= 0) throw Error("schedule has zero duration");
}

std::size_t Simulator::absolute_epoch(SimTime t) const {
  const SimTime cycles = t / cycle_;
  const SimTime within = t % cycle_;
  const auto it = std::upper_bound(epoch_starts_.begin(), epoch_starts_.end(), within);
  const auto idx = static_cast<std::size_t>(std::distance(epoch_starts_.begin(), it)) - 1;
  return static_cast<std::size_t>(cycles) * epoch_starts_.size() + idx;
}

const LinkEpoch& Simulator::epoch_at(SimTime t) const {
  return schedule_.epochs[absolute_epoch(t) % schedule_.epochs.size()];
}

void Simulator::push(SimTime at, Ev type, std::size_t conn, std::uint64_t a, std::uint64_t b) {
  queue_.push({at, order_++, type, static_cast<std::uint32_t>(conn), a, b});
}

Simulator::ConnId Simulator::open_connection(SimTime at, Hooks hooks) {
  Connection c;
  c.hooks = std::move(hooks);
  c.tcp = TcpConnectionState::initial(cfg_);
  c.stats.open_ms = to_ms(at);
  conns_.push_back(std::move(c));
  const auto id = conns_.size() - 1;
  push(std::max(at, now_), Ev::open, id);
  return id;
}

void Simulator::send_request(ConnId conn, std::function<void(SimTime)> on_arrival) {
  callbacks_.push_back(std::move(on_arrival));
  push(uplink(now_), Ev::request_at_server, conn, callbacks_.size() - 1);
}

void Simulator::server_write(ConnId conn, std::uint64_t bytes) {
  auto& c = conns_[conn];
  c.app_end += bytes;
  c.stats.bytes_queued += bytes;
  if (!c.in_refill) try_send(conn);
}

void Simulator::call_at(SimTime at, std::function<void(SimTime)> fn) {
  callbacks_.push_back(std::move(fn));
  push(std::max(at, now_), Ev::callback, 0, callbacks_.size() - 1);
}

bool Simulator::run() {
  const SimTime limit = from_ms(cfg_.time_limit_ms);
  while (!queue_.empty() && !stopped_) {
    const QueueItem item = queue_.top();
    if (item.time > limit) {
      now_ = limit;
      return false;
    }
    queue_.pop();
    now_ = item.time;
    if (cfg_.record_events) {
      const auto epoch = absolute_epoch(now_);
      if (epoch != logged_epoch_) {
        logged_epoch_ = epoch;
        events_.push_back({now_, EventKind::epoch_change, 0, 0, 0, 0, 0, epoch});
      }
    }
    dispatch(item);
  }
  return true;
}

void Simulator::dispatch(const QueueItem& item) {
  const std::size_t conn = item.conn;
  switch (item.type) {
    case Ev::open:
      push(uplink(now_), Ev::syn_at_server, conn);
      break;
    case Ev::syn_at_server:
      push(downlink_control(), Ev::synack_at_client, conn);
      break;
    case Ev::synack_at_client:
      conns_[conn].tls_remaining = cfg_.tls_rtts;
      if (cfg_.tls_rtts == 0) {
        established(conn);
      } else {
        push(uplink(now_), Ev::tls_at_server, conn);
      }
      break;
    case Ev::tls_at_server:
      push(downlink_control(), Ev::tls_at_client, conn);
      break;
    case Ev::tls_at_client:
      if (--conns_[conn].tls_remaining == 0) {
        established(conn);
      } else {
        push(uplink(now_), Ev::tls_at_server, conn);
      }
      break;
    case Ev::request_at_server:
    case Ev::callback: {
      // Moved out first: the callback may append to callbacks_.
      auto fn = std::move(callbacks_[item.a]);
      callbacks_[item.a] = nullptr;
      fn(now_);
      break;
    }
    case Ev::data_at_client:
      on_data(conn, item.a, item.b);
      break;
    case Ev::ack_at_server:
      on_ack(conn, item.a);
      break;
    case Ev::rto_timer:
      if (conns_[conn].rto_armed && conns_[conn].rto_generation == item.a) {
        conns_[conn].rto_armed = false;
        on_rto(conn);
      }
      break;
    case Ev::delack_timer:
      if (conns_[conn].delack_armed && conns_[conn].delack_generation == item.a) send_ack(conn);
      break;
  }
}

void Simulator::established(std::size_t conn) {
  auto& c = conns_[conn];
  c.stats.handshake_done_ms = to_ms(now_);
  if (c.hooks.on_established) c.hooks.on_established(conn, now_);
}

SimTime Simulator::uplink(SimTime sent_at) {
  SimTime arrival = sent_at + from_ms(epoch_at(sent_at).one_way_delay_ms);
  arrival = std::max(arrival, up_last_arrival_);
  up_last_arrival_ = arrival;
  return arrival;
}

SimTime Simulator::downlink_control() {
  const SimTime start = std::max(now_, down_free_);
  SimTime arrival = start + from_ms(epoch_at(start).one_way_delay_ms);
  arrival = std::max(arrival, down_last_arrival_);
  down_last_arrival_ = arrival;
  return arrival;
}

std::optional<SimTime> Simulator::downlink_data(std::size_t conn, std::uint64_t seq, std::uint32_t len) {
  const auto& entry = epoch_at(now_);
  if (entry.loss_active && entry.loss_rate > 0) {
    const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    if (u < entry.loss_rate) {
      ++conns_[conn].stats.drops;
      log(EventKind::drop, conn, seq, len);
      return std::nullopt;
    }
  }
  const SimTime start = std::max(now_, down_free_);
  const auto& tx_epoch = epoch_at(start);
  SimTime serialization = 0;
  if (std::isfinite(tx_epoch.bandwidth_Bps)) {
    serialization = static_cast<SimTime>(std::llround(static_cast<double>(len) * 1e6 / tx_epoch.bandwidth_Bps));
  }
  const SimTime depart = start + serialization;
  down_free_ = depart;
  SimTime arrival = depart + from_ms(epoch_at(depart).one_way_delay_ms);
  arrival = std::max(arrival, down_last_arrival_);
  down_last_arrival_ = arrival;
  return arrival;
}

void Simulator::try_send(std::size_t conn) {
  auto& c = conns_[conn];
  auto& s = c.tcp;
  const double rwnd = cfg_.rwnd;
  while (true) {
    const double window = std::min(s.cwnd, rwnd);
    const auto in_flight = static_cast<double>(s.in_flight());
    if (in_flight >= window) break;
    std::uint64_t avail = c.app_end - s.snd_next;
    if (avail < cfg_.mss && c.hooks.on_refill && !c.in_refill) {
      c.in_refill = true;
      c.hooks.on_refill(conn, cfg_.mss - avail);
      c.in_refill = false;
      avail = c.app_end - s.snd_next;
    }
    if (avail == 0) break;
    const auto len = static_cast<std::uint32_t>(std::min<std::uint64_t>(cfg_.mss, avail));
    if (in_flight + len > window) break;
    const auto seq = s.snd_next;
    s.snd_next += len;
    transmit(conn, seq, len);
  }
}

void Simulator::transmit(std::size_t conn, std::uint64_t seq, std::uint32_t len) {
  auto& c = conns_[conn];
  auto& s = c.tcp;
  const bool is_retx = seq < s.snd_max;
  ++c.stats.segments_sent;
  if (is_retx) {
    ++c.stats.retransmissions;
    c.timing = false;
  } else if (!c.timing) {
    c.timing = true;
    c.timed_end = seq + len;
    c.timed_at = now_;
  }
  s.snd_max = std::max(s.snd_max, seq + len);
  log(is_retx ? EventKind::retransmit : EventKind::send, conn, seq, len);
  if (const auto arrival = downlink_data(conn, seq, len)) push(*arrival, Ev::data_at_client, conn, seq, len);
  if (!c.rto_armed) arm_rto(conn);
}

void Simulator::retransmit_head(std::size_t conn) {
  auto& s = conns_[conn].tcp;
  const auto len = static_cast<std::uint32_t>(std::min<std::uint64_t>(cfg_.mss, s.snd_max - s.snd_una));
  if (len == 0) return;
  transmit(conn, s.snd_una, len);
  if (s.snd_next < s.snd_una + len) s.snd_next = s.snd_una + len;
}

void Simulator::arm_rto(std::size_t conn) {
  auto& c = conns_[conn];
  c.rto_armed = true;
  ++c.rto_generation;
  push(now_ + from_ms(c.tcp.rto_ms), Ev::rto_timer, conn, c.rto_generation);
}

void Simulator::disarm_rto(std::size_t conn) {
  auto& c = conns_[conn];
  c.rto_armed = false;
  ++c.rto_generation;
}

void Simulator::update_rto(Connection& c, double sample_ms) {
  auto& s = c.tcp;
  if (!s.srtt_ms) {
    s.srtt_ms = sample_ms;
    s.rttvar_ms = sample_ms / 2.0;
  } else {
    s.rttvar_ms = 0.75 * s.rttvar_ms + 0.25 * std::abs(*s.srtt_ms - sample_ms);
    s.srtt_ms = 0.875 * *s.srtt_ms + 0.125 * sample_ms;
  }
  s.rto_ms = std::clamp(*s.srtt_ms + 4.0 * s.rttvar_ms, cfg_.min_rto_ms, cfg_.max_rto_ms);
}

void Simulator::on_ack(std::size_t conn, std::uint64_t ack) {
  auto& c = conns_[conn];
  auto& s = c.tcp;
  log(EventKind::ack, conn, ack, 0);
  if (ack > s.snd_una) {
    const auto acked = ack - s.snd_una;
    s.snd_una = ack;
    if (s.snd_next < s.snd_una) s.snd_next = s.snd_una;
    s.dup_acks = 0;
    if (c.timing && ack >= c.timed_end) {
      c.timing = false;
      update_rto(c, to_ms(now_ - c.timed_at));
    } else if (s.srtt_ms) {
      // Fresh ACK clears any backoff.
      s.rto_ms = std::clamp(*s.srtt_ms + 4.0 * s.rttvar_ms, cfg_.min_rto_ms, cfg_.max_rto_ms);
    }
    if (s.phase == Phase::recovery) {
      if (s.recover && ack >= *s.recover) {
        s.cwnd = std::max(s.ssthresh, static_cast<double>(cfg_.mss));
        s.phase = Phase::congestion_avoidance;
      } else {
        // Partial ACK: deflate by what left the network, resend the next hole.
        s.cwnd = std::max(s.cwnd - static_cast<double>(acked) + cfg_.mss, static_cast<double>(cfg_.mss));
        retransmit_head(conn);
      }
    } else {
      window_growth(s, acked, cfg_);
    }
    if (s.snd_una < s.snd_max) {
      arm_rto(conn);
    } else {
      disarm_rto(conn);
    }
    trace_cwnd(c);
    try_send(conn);
    return;
  }
  if (ack == s.snd_una && s.snd_max > s.snd_una) {
    ++s.dup_acks;
    if (s.phase == Phase::recovery) {
      // Each further duplicate means one more segment has left the network.
      s.cwnd += cfg_.mss;
      try_send(conn);
      return;
    }
    const bool past_recover = !s.recover || s.snd_una > *s.recover;
    if (s.dup_acks == cfg_.dupack_threshold && s.phase != Phase::recovery && past_recover) {
      on_loss_detected(s, LossSignal::dupack, cfg_);
      ++c.stats.fast_retransmits;
      trace_cwnd(c);
      retransmit_head(conn);
    }
  }
}

void Simulator::on_rto(std::size_t conn) {
  auto& c = conns_[conn];
  auto& s = c.tcp;
  if (s.snd_una >= s.snd_max) return;
  on_loss_detected(s, LossSignal::rto, cfg_);
  ++c.stats.timeouts;
  s.snd_next = s.snd_una;  // go back N
  c.timing = false;
  log(EventKind::rto, conn, s.snd_una, 0);
  trace_cwnd(c);
  arm_rto(conn);
  try_send(conn);
}

void Simulator::on_data(std::size_t conn, std::uint64_t seq, std::uint64_t len) {
  auto& c = conns_[conn];
  log(EventKind::deliver, conn, seq, static_cast<std::uint32_t>(len));
  const auto end = seq + len;
  if (end <= c.rcv_next) {
    send_ack(conn);
    return;
  }
  if (seq > c.rcv_next) {
    auto& ooo = c.out_of_order;
    auto [it, inserted] = ooo.emplace(seq, end);
    if (!inserted) it->second = std::max(it->second, end);
    send_ack(conn);
    return;
  }
  const bool had_hole = !c.out_of_order.empty();
  c.rcv_next = end;
  auto& ooo = c.out_of_order;
  while (!ooo.empty() && ooo.begin()->first <= c.rcv_next) {
    c.rcv_next = std::max(c.rcv_next, ooo.begin()->second);
    ooo.erase(ooo.begin());
  }
  c.stats.bytes_delivered = c.rcv_next;
  c.stats.last_delivery_ms = to_ms(now_);
  if (c.hooks.on_delivered) c.hooks.on_delivered(conn, c.rcv_next, now_);

  if (had_hole || cfg_.delayed_ack == DelayedAckPolicy::immediate) {
    send_ack(conn);
    return;
  }
  if (++c.unacked_segments >= 2) {
    send_ack(conn);
    return;
  }
  if (!c.delack_armed) {
    c.delack_armed = true;
    ++c.delack_generation;
    const double timeout = cfg_.delayed_ack == DelayedAckPolicy::every_second_500ms ? 500.0 : 40.0;
    push(now_ + from_ms(timeout), Ev::delack_timer, conn, c.delack_generation);
  }
}

void Simulator::send_ack(std::size_t conn) {
  auto& c = conns_[conn];
  c.unacked_segments = 0;
  if (c.delack_armed) {
    c.delack_armed = false;
    ++c.delack_generation;
  }
  push(uplink(now_), Ev::ack_at_server, conn, c.rcv_next);
}

void Simulator::log(EventKind kind, std::size_t conn, std::uint64_t seq, std::uint32_t len) {
  if (!cfg_.record_events) return;
  const auto& s = conns_[conn].tcp;
  events_.push_back({now_, kind, conn, seq, len, s.cwnd, s.in_flight(), absolute_epoch(now_)});
}

void Simulator::trace_cwnd(Connection& c) {
  if (cfg_.record_cwnd) c.stats.cwnd_trace.emplace_back(to_ms(now_), c.tcp.cwnd);
}

SimResult run(const EmulationSchedule& schedule, std::span<const ConnectionPlan> workload, const SimConfig& cfg,
              std::uint64_t seed) {
  if (workload.empty()) throw Error("workload has no connections");
  Simulator sim(schedule, cfg, seed);
  for (const auto& plan : workload) {
    const auto bytes = plan.bytes;
    Simulator::Hooks hooks;
    hooks.on_established = [&sim, bytes](Simulator::ConnId id, SimTime) {
      sim.send_request(id, [&sim, id, bytes](SimTime) { sim.server_write(id, bytes); });
    };
    sim.open_connection(from_ms(plan.open_at_ms), std::move(hooks));
  }
  SimResult result;
  result.converged = sim.run();
  result.end_ms = to_ms(sim.now());
  for (std::size_t i = 0; i < sim.connection_count(); ++i) {
    result.connections.push_back(sim.stats(i));
    if (sim.stats(i).bytes_delivered < workload[i].bytes) result.converged = false;
  }
  result.events = sim.events();
  return result;
}

void write_events(std::ostream& out, std::span<const SimEvent> events) {
  out << kEventSchema << '\n';
  out << "time_us,kind,conn,seq,len,cwnd,in_flight,epoch\n";
  for (const auto& e : events) {
    out << e.time << ',' << to_string(e.kind) << ',' << e.conn << ',' << e.seq << ',' << e.len << ','
        << text::format_double(e.cwnd) << ',' << e.in_flight << ',' << e.epoch << '\n';
  }
}

}  // namespace h2shard::netsim
