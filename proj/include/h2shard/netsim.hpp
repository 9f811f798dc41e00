#pragma once

// Deterministic discrete-event simulation of a schedule-driven bottleneck
// link carrying a simplified loss-reactive TCP (slow start, linear
// congestion avoidance, multiplicative decrease by beta, NewReno-style
// recovery with window inflation but without SACK, RTO with exponential
// backoff).
//
// Server-to-client data segments are the only packets ever dropped; the
// handshake, requests and ACKs always arrive. Each direction is a FIFO: a
// packet never overtakes an earlier one even when the delay shrinks.

#include <cmath>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <queue>
#include <random>
#include <span>
#include <vector>

#include "h2shard/schedule.hpp"

namespace h2shard::netsim {

/// Simulation clock in microseconds.
using SimTime = std::int64_t;

inline SimTime from_ms(double ms) { return static_cast<SimTime>(std::llround(ms * 1000.0)); }
inline double to_ms(SimTime t) { return static_cast<double>(t) / 1000.0; }

enum class DelayedAckPolicy {
  every_second_40ms,   // ACK every second segment, 40 ms timer
  immediate,           // ACK every segment
  every_second_500ms,  // ACK every second segment, 500 ms timer
};

struct SimConfig {
  std::uint32_t mss = 1460;
  std::uint32_t icw_segments = 10;
  std::uint32_t rwnd = 65535;
  double beta = 0.7;
  std::uint32_t dupack_threshold = 3;
  double initial_rto_ms = 1000;
  double min_rto_ms = 1000;  // rto = max(srtt + 4 rttvar, min_rto)
  double max_rto_ms = 120000;
  DelayedAckPolicy delayed_ack = DelayedAckPolicy::every_second_40ms;
  std::uint32_t tls_rtts = 2;
  double time_limit_ms = 600000;
  bool record_events = false;
  bool record_cwnd = false;

  void validate() const;
};

enum class Phase { slow_start, congestion_avoidance, recovery };
enum class LossSignal { dupack, rto };

/// Server-side sender state of one connection.
struct TcpConnectionState {
  double cwnd = 0;  // bytes
  double ssthresh = INFINITY;
  Phase phase = Phase::slow_start;
  std::uint64_t snd_una = 0;
  std::uint64_t snd_next = 0;
  std::uint64_t snd_max = 0;  // highest byte ever sent
  std::optional<std::uint64_t> recover;
  std::uint32_t dup_acks = 0;
  double rto_ms = 1000;
  std::optional<double> srtt_ms;
  double rttvar_ms = 0;

  static TcpConnectionState initial(const SimConfig& cfg);
  std::uint64_t in_flight() const { return snd_next - snd_una; }
};

/// Multiplicative decrease. The caller retransmits snd_una afterwards.
///  dupack: ssthresh = cwnd * beta, cwnd = ssthresh, enter recovery.
///  rto:    ssthresh = cwnd * beta, cwnd = 1 mss, slow start, rto doubles.
/// ssthresh never drops below 2 mss and cwnd never below 1 mss.
void on_loss_detected(TcpConnectionState& s, LossSignal via, const SimConfig& cfg);

/// Window increase for `acked` newly acknowledged bytes: slow start adds
/// the acked bytes, congestion avoidance adds mss * acked / cwnd. Capped at
/// rwnd; no growth during recovery.
void window_growth(TcpConnectionState& s, std::uint64_t acked, const SimConfig& cfg);

enum class EventKind { send, retransmit, drop, deliver, ack, rto, epoch_change };
const char* to_string(EventKind kind);

struct SimEvent {
  SimTime time = 0;
  EventKind kind = EventKind::send;
  std::size_t conn = 0;
  std::uint64_t seq = 0;  // ack number for `ack` events
  std::uint32_t len = 0;
  double cwnd = 0;
  std::uint64_t in_flight = 0;
  std::size_t epoch = 0;

  friend bool operator==(const SimEvent&, const SimEvent&) = default;
};

struct ConnectionStats {
  double open_ms = 0;
  std::optional<double> handshake_done_ms;
  std::optional<double> last_delivery_ms;
  std::uint64_t bytes_queued = 0;
  std::uint64_t bytes_delivered = 0;
  std::uint64_t segments_sent = 0;  // including retransmissions
  std::uint64_t retransmissions = 0;
  std::uint64_t drops = 0;
  std::uint64_t fast_retransmits = 0;
  std::uint64_t timeouts = 0;
  std::vector<std::pair<double, double>> cwnd_trace;  // (ms, bytes)
};

class Simulator {
 public:
  using ConnId = std::size_t;

  struct Hooks {
    /// Client finished the TCP (+TLS) handshake and may send requests.
    std::function<void(ConnId, SimTime)> on_established;
    /// Client's in-order byte count advanced.
    std::function<void(ConnId, std::uint64_t, SimTime)> on_delivered;
    /// Server could send but holds fewer than `want` unsent bytes. The hook
    /// may call server_write; it must not re-enter anything else.
    std::function<void(ConnId, std::uint64_t want)> on_refill;
  };

  Simulator(const EmulationSchedule& schedule, const SimConfig& cfg, std::uint64_t seed);

  ConnId open_connection(SimTime at, Hooks hooks);
  /// Client-to-server message sent now; `on_arrival` runs at the server.
  void send_request(ConnId conn, std::function<void(SimTime)> on_arrival);
  /// Appends application bytes to the server's send stream.
  void server_write(ConnId conn, std::uint64_t bytes);
  void call_at(SimTime at, std::function<void(SimTime)> fn);
  void stop() { stopped_ = true; }

  /// Runs to quiescence, stop(), or the time limit. Returns true unless the
  /// time limit cut the run short.
  bool run();

  SimTime now() const { return now_; }
  std::size_t connection_count() const { return conns_.size(); }
  const ConnectionStats& stats(ConnId conn) const { return conns_[conn].stats; }
  const TcpConnectionState& tcp(ConnId conn) const { return conns_[conn].tcp; }
  const std::vector<SimEvent>& events() const { return events_; }
  const SimConfig& config() const { return cfg_; }

  /// Epoch in effect at time t (the schedule repeats past its end).
  const LinkEpoch& epoch_at(SimTime t) const;

 private:
  enum class Ev : std::uint8_t {
    open,
    syn_at_server,
    synack_at_client,
    tls_at_server,
    tls_at_client,
    request_at_server,
    data_at_client,
    ack_at_server,
    rto_timer,
    delack_timer,
    callback,
  };

  struct QueueItem {
    SimTime time;
    std::uint64_t order;
    Ev type;
    std::uint32_t conn;
    std::uint64_t a;
    std::uint64_t b;

    bool operator>(const QueueItem& o) const { return time != o.time ? time > o.time : order > o.order; }
  };

  struct Connection {
    Hooks hooks;
    TcpConnectionState tcp;
    ConnectionStats stats;
    std::uint64_t app_end = 0;
    bool in_refill = false;
    // retransmission timer
    bool rto_armed = false;
    std::uint64_t rto_generation = 0;
    // RTT timing (one segment at a time, Karn's rule)
    bool timing = false;
    std::uint64_t timed_end = 0;
    SimTime timed_at = 0;
    // client receiver
    std::uint32_t tls_remaining = 0;
    std::uint64_t rcv_next = 0;
    std::map<std::uint64_t, std::uint64_t> out_of_order;
    std::uint32_t unacked_segments = 0;
    bool delack_armed = false;
    std::uint64_t delack_generation = 0;
  };

  void push(SimTime at, Ev type, std::size_t conn, std::uint64_t a = 0, std::uint64_t b = 0);
  void dispatch(const QueueItem& item);

  SimTime uplink(SimTime delay_from);
  SimTime downlink_control();
  std::optional<SimTime> downlink_data(std::size_t conn, std::uint64_t seq, std::uint32_t len);

  void try_send(std::size_t conn);
  void transmit(std::size_t conn, std::uint64_t seq, std::uint32_t len);
  void retransmit_head(std::size_t conn);
  void arm_rto(std::size_t conn);
  void disarm_rto(std::size_t conn);
  void update_rto(Connection& c, double sample_ms);

  void on_ack(std::size_t conn, std::uint64_t ack);
  void on_rto(std::size_t conn);
  void on_data(std::size_t conn, std::uint64_t seq, std::uint64_t len);
  void send_ack(std::size_t conn);
  void established(std::size_t conn);

  void log(EventKind kind, std::size_t conn, std::uint64_t seq, std::uint32_t len);
  void trace_cwnd(Connection& c);
  std::size_t absolute_epoch(SimTime t) const;

  EmulationSchedule schedule_;
  SimConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<SimTime> epoch_starts_;
  SimTime cycle_ = 0;

  std::priority_queue<QueueItem, std::vector<QueueItem>, std::greater<>> queue_;
  std::uint64_t order_ = 0;
  SimTime now_ = 0;
  bool stopped_ = false;

  SimTime down_free_ = 0;
  SimTime down_last_arrival_ = 0;
  SimTime up_last_arrival_ = 0;

  std::vector<Connection> conns_;
  std::vector<std::function<void(SimTime)>> callbacks_;
  std::vector<SimEvent> events_;
  std::size_t logged_epoch_ = SIZE_MAX;
};

/// Standalone workload: each connection opens at `open_at_ms`, the client
/// sends one request on handshake completion, and the server answers with
/// `bytes` bytes.
struct ConnectionPlan {
  double open_at_ms = 0;
  std::uint64_t bytes = 0;
};

struct SimResult {
  std::vector<ConnectionStats> connections;
  bool converged = true;
  double end_ms = 0;
  std::vector<SimEvent> events;
};

SimResult run(const EmulationSchedule& schedule, std::span<const ConnectionPlan> workload, const SimConfig& cfg,
              std::uint64_t seed);

inline constexpr const char* kEventSchema = "events/v1";
void write_events(std::ostream& out, std::span<const SimEvent> events);

}  // namespace h2shard::netsim
