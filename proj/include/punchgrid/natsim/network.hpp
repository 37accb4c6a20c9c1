#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <semaphore>
#include <set>
#include <string>
#include <vector>

#include "punchgrid/net/transport.hpp"

namespace punchgrid::natsim {

using net::Duration;
using net::Endpoint;
using net::Ipv4;

enum class NatPolicy { FullCone, AddressRestricted, Symmetric };

std::string_view to_string(NatPolicy p);
NatPolicy parse_policy(std::string_view text);

enum class SegmentKind : std::uint8_t { Syn, SynAck, Data, Ack, Fin, Rst };

std::string_view to_string(SegmentKind k);

/// One datagram on the virtual wire. `src` is the sender's own address;
/// translation happens in transit.
struct Packet {
  std::uint32_t origin_host = 0;
  Endpoint src;
  Endpoint dst;
  SegmentKind kind = SegmentKind::Data;
  std::uint64_t seq = 0;
  Bytes payload;
};

enum class DeliveryResult { Delivered, Dropped };

struct TraceEvent {
  Duration time{};
  SegmentKind kind{};
  Endpoint sent_src;
  Endpoint wire_src;  // after outbound translation
  Endpoint wire_dst;
  Endpoint final_dst;  // after inbound translation
  DeliveryResult result{};
  std::string note;

  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

struct MappingView {
  Endpoint internal;
  Endpoint external;
  std::optional<Endpoint> remote;  // Symmetric only: the destination this mapping is bound to
  Duration last_activity{};
};

class VirtualNetwork;

/// NAT gateway. FullCone and AddressRestricted use one mapping per internal
/// endpoint; Symmetric allocates a fresh external port per (internal, remote)
/// pair and only admits the remote it was created for.
class NatGateway {
 public:
  NatPolicy policy() const { return policy_; }
  Ipv4 external_host() const { return external_; }
  Duration mapping_ttl() const { return ttl_; }

  std::vector<MappingView> mappings() const;

  /// External endpoint currently mapped for `internal` (toward `remote` under
  /// Symmetric), if a live mapping exists.
  std::optional<Endpoint> external_for(const Endpoint& internal, const Endpoint& remote) const;

 private:
  friend class VirtualNetwork;

  struct Mapping {
    Endpoint internal;
    std::uint16_t external_port = 0;
    std::optional<Endpoint> remote;
    std::set<Ipv4> contacted;
    Duration last_activity{};
  };

  NatGateway(NatPolicy policy, Ipv4 external, Duration ttl) : policy_(policy), external_(external), ttl_(ttl) {}

  Endpoint outbound(const Endpoint& internal, const Endpoint& remote, Duration now);
  std::optional<Endpoint> inbound(const Endpoint& src, std::uint16_t external_port, Duration now);
  std::size_t expire(Duration now);

  NatPolicy policy_;
  Ipv4 external_;
  Duration ttl_;
  std::uint16_t next_port_ = 20000;
  std::map<std::uint16_t, Mapping> by_port_;
};

class HostStack;

struct NetworkConfig {
  Duration link_latency = std::chrono::milliseconds(1);
  /// Unacknowledged data older than this aborts the connection (the
  /// simulated TCP user timeout).
  Duration abort_timeout = std::chrono::seconds(1);
  std::size_t max_segment = 64 * 1024;
  /// Virtual-time ceiling for run(); tasks still alive past it are cancelled.
  Duration time_limit = std::chrono::hours(2);
  bool record_trace = true;
};

struct NetworkStats {
  std::uint64_t sent = 0;
  std::uint64_t delivered = 0;
  std::uint64_t dropped = 0;
  std::uint64_t expired_mappings = 0;
};

/// In-process network with a manually advanced virtual clock.
///
/// Worker code runs as tasks. Each task has its own thread but exactly one
/// task (or the scheduler) executes at any moment and control passes at
/// well-defined points, so a run is a deterministic function of the task
/// bodies. Blocking calls on a HostStack yield to the scheduler, which
/// advances the clock to the next packet or timer.
class VirtualNetwork {
 public:
  explicit VirtualNetwork(NetworkConfig config = {});
  ~VirtualNetwork();

  VirtualNetwork(const VirtualNetwork&) = delete;
  VirtualNetwork& operator=(const VirtualNetwork&) = delete;

  NatGateway& add_gateway(NatPolicy policy, Ipv4 external_host, Duration mapping_ttl);
  std::shared_ptr<HostStack> add_public_host(Ipv4 ip);
  /// Places a host at `internal` behind `gateway`; AddressInUse if taken.
  std::shared_ptr<HostStack> attach(NatGateway& gateway, Ipv4 internal);

  /// Routes one packet immediately: outbound translation at the sender's
  /// gateway, inbound filtering at the receiver's, then hand-off to the
  /// destination host. Drops are silent apart from the trace.
  DeliveryResult deliver(Packet p);

  /// Queues `p` for delivery after the link latency.
  void transmit(Packet p);

  /// Processes every event due within `dt` and moves the clock forward.
  /// Returns the number of NAT mappings that expired meanwhile.
  std::size_t advance_time(Duration dt);

  Duration now() const { return now_; }
  const NetworkConfig& config() const { return config_; }
  const std::vector<TraceEvent>& trace() const { return trace_; }
  const NetworkStats& stats() const { return stats_; }

  // Cooperative tasks ----------------------------------------------------

  /// Registers a task. Daemon tasks (servers) are cancelled once every
  /// non-daemon task has finished.
  std::size_t spawn(std::string name, std::function<void()> body, bool daemon = false);

  /// Runs all tasks to completion.
  void run();

  /// Exception a task ended with, if any.
  std::exception_ptr task_error(std::size_t id) const;
  Duration task_finish_time(std::size_t id) const;

  /// Called from inside a task: block until `host` sees activity or the
  /// clock reaches `deadline` (host may be null for a plain sleep).
  void block_current(HostStack* host, Duration deadline);
  bool in_task() const;

  void schedule_timer(Duration at, std::function<void()> fn);

  struct Task;

 private:
  friend class HostStack;
  struct Event {
    Duration time;
    std::uint64_t order;
    std::function<void()> fn;
    bool operator>(const Event& o) const { return time != o.time ? time > o.time : order > o.order; }
  };

  void sweep_mappings();
  bool process_one_event_until(Duration limit);
  void switch_to(Task& t);
  void wake_host(HostStack& host);

  NetworkConfig config_;
  Duration now_{};
  std::uint64_t event_order_ = 0;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
  std::vector<std::unique_ptr<NatGateway>> gateways_;
  std::vector<std::shared_ptr<HostStack>> hosts_;
  std::map<Ipv4, HostStack*> public_hosts_;
  std::map<std::pair<const NatGateway*, Ipv4>, HostStack*> internal_hosts_;
  std::vector<TraceEvent> trace_;
  NetworkStats stats_;
  std::vector<std::unique_ptr<Task>> tasks_;
  std::binary_semaphore sched_sem_{0};
};

/// A virtual host's TCP stack. Implements Transport so communicator code runs
/// unchanged on the simulated network.
class HostStack final : public net::Transport, public std::enable_shared_from_this<HostStack> {
 public:
  HostStack(VirtualNetwork& net, std::uint32_t id, Ipv4 ip, NatGateway* gateway);
  ~HostStack() override;

  Ipv4 ip() const { return ip_; }
  NatGateway* gateway() const { return gateway_; }
  std::uint32_t id() const { return id_; }
  /// Live connections (any state but closed), for leak checks.
  std::size_t connection_count() const { return conns_.size(); }

  std::unique_ptr<net::Listener> listen(std::uint16_t port, bool shared_port = false) override;
  std::unique_ptr<net::Stream> connect(const Endpoint& remote, std::uint16_t local_port) override;
  Duration now() const override { return net_.now(); }
  void wait_until(Duration deadline) override;
  void sleep_until(Duration deadline) override;

  struct Conn;
  struct ListenState;

 private:
  friend class VirtualNetwork;

  void on_packet(const Packet& p);
  void send(const Endpoint& from, const Endpoint& to, SegmentKind kind, Bytes payload = {}, std::uint64_t seq = 0);
  void close_conn(const std::shared_ptr<Conn>& c);
  void arm_ack_timer(const std::shared_ptr<Conn>& c, std::uint64_t seq);
  std::uint16_t ephemeral_port();

 public:
  // Used by the stream/listener implementations.
  std::size_t stream_write(const std::shared_ptr<Conn>& c, ByteView data);
  void stream_close(const std::shared_ptr<Conn>& c);
  void stream_shutdown(const std::shared_ptr<Conn>& c);
  void listener_close(std::uint16_t port);
  std::shared_ptr<Conn> listener_accept(std::uint16_t port);

 private:
  VirtualNetwork& net_;
  std::uint32_t id_;
  Ipv4 ip_;
  NatGateway* gateway_;
  bool activity_ = false;
  std::uint16_t next_ephemeral_ = 40000;
  std::map<std::uint16_t, std::shared_ptr<ListenState>> listeners_;
  std::map<std::pair<std::uint16_t, Endpoint>, std::shared_ptr<Conn>> conns_;
};

}  // namespace punchgrid::natsim
