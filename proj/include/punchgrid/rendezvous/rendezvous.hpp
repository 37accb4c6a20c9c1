#pragma once

#include <map>
#include <memory>
#include <optional>
#include <stop_token>
#include <vector>

#include "punchgrid/bootstrap/bootstrap.hpp"
#include "punchgrid/net/frame_channel.hpp"

namespace punchgrid::rendezvous {

using bootstrap::JobId;
using net::Duration;
using net::Endpoint;
using net::PeerAddress;

/// Reserved DATA tag the lower rank uses to tell its peer which of the
/// candidate connections survives a punch.
inline constexpr std::uint32_t kTagPunchSelect = 0xFFFFFF00u;

struct TranslationEntry {
  JobId job;
  std::uint32_t rank = 0;
  PeerAddress external;  // source address of the registration as seen here
  std::uint32_t world_size = 0;
  Duration registered_at{};
};

/// Pairing server. REGISTER records the connection's observed source address;
/// PEER_ADDR answers from the table or parks the request until the peer shows
/// up or `hold_timeout` passes. An entry lives as long as the connection that
/// registered it.
class RendezvousServer {
 public:
  RendezvousServer(std::shared_ptr<net::Transport> transport, std::uint16_t port,
                   Duration hold_timeout = std::chrono::seconds(60));
  ~RendezvousServer();

  Endpoint local() const;
  void poll(Duration deadline);
  void run(std::stop_token stop = {});

  std::optional<TranslationEntry> lookup(const JobId& job, std::uint32_t rank) const;
  std::size_t size() const { return table_.size(); }

 private:
  struct Client;
  struct Held {
    std::uint64_t client;
    std::uint32_t tag;
    std::string job;
    std::uint32_t rank;
    Duration expires;
  };
  struct Slot {
    TranslationEntry entry;
    std::uint64_t owner;
  };

  void handle(Client& c, const wire::Frame& f);
  void on_register(Client& c, const wire::Frame& f);
  void on_peer_addr(Client& c, const wire::Frame& f);
  void answer_held();
  void send_to(std::uint64_t client, const wire::Frame& f);

  std::shared_ptr<net::Transport> transport_;
  std::unique_ptr<net::Listener> listener_;
  Duration hold_timeout_;
  std::map<std::uint64_t, std::unique_ptr<Client>> clients_;
  std::uint64_t next_client_ = 1;
  std::map<std::pair<std::string, std::uint32_t>, Slot> table_;
  std::vector<Held> held_;
};

struct RetryPolicy {
  Duration initial_delay = std::chrono::milliseconds(100);
  double backoff = 2.0;
  std::uint32_t max_attempts = 10;

  /// Time attempt `k` (0-based) is given before the next one starts.
  Duration delay(std::uint32_t k) const;
  /// Sum of all attempt windows.
  Duration budget() const;
};

/// A worker's registration connection. It is opened from the same local port
/// the worker later punches from, so the NAT mapping it creates is the one
/// peers are told about.
class RendezvousClient {
 public:
  RendezvousClient(net::Transport& transport, const Endpoint& server, std::uint16_t local_port, Duration deadline);

  /// Registers and returns the external address the server observed.
  PeerAddress register_worker(const JobId& job, std::uint32_t rank, std::uint32_t world_size, Duration deadline);

  /// Blocking single lookup; punch_all issues its lookups concurrently.
  PeerAddress peer_address(const JobId& job, std::uint32_t peer, Duration deadline);

  net::FrameChannel& channel() { return channel_; }
  net::Transport& transport() { return transport_; }
  void close() { channel_.close(); }

 private:
  net::Transport& transport_;
  net::FrameChannel channel_;
};

struct PunchSetup {
  net::Transport& transport;
  net::Listener& listener;  // shared-port listener on the registration port
  RendezvousClient& rendezvous;
  JobId job;
  std::uint32_t rank = 0;
  std::uint32_t world_size = 0;
  RetryPolicy policy;
  Duration lookup_timeout = std::chrono::seconds(60);
  /// PINGs on the rendezvous connection while punching; zero disables.
  Duration keepalive_interval = std::chrono::milliseconds(200);
};

using Connections = std::map<std::uint32_t, std::unique_ptr<net::FrameChannel>>;

/// Punches to every rank in `peers` at once. Both sides of each pair must be
/// punching each other. Returns one open, validated connection per peer.
/// Throws HolePunchFailed (retry budget spent), Timeout (peer never
/// registered) or PeerClosed (rendezvous went away).
Connections punch_all(PunchSetup& setup, const std::vector<std::uint32_t>& peers);

std::unique_ptr<net::FrameChannel> punch_connect(PunchSetup& setup, std::uint32_t peer);

}  // namespace punchgrid::rendezvous
