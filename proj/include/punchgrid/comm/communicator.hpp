#pragma once

#include <deque>
#include <list>
#include <map>
#include <memory>
#include <vector>

#include "punchgrid/bootstrap/bootstrap.hpp"
#include "punchgrid/net/frame_channel.hpp"
#include "punchgrid/rendezvous/rendezvous.hpp"

namespace punchgrid::comm {

using bootstrap::JobId;
using net::Duration;
using net::Endpoint;
using rendezvous::RetryPolicy;

/// Tags at or above this value are reserved for collectives and the
/// connection handshake; user tags must stay below it.
inline constexpr std::uint32_t kReservedTagBase = 0xFFFF0000u;

namespace tags {
inline constexpr std::uint32_t kBarrier = kReservedTagBase + 1;
inline constexpr std::uint32_t kBarrierRelease = kReservedTagBase + 2;
inline constexpr std::uint32_t kBcast = kReservedTagBase + 3;
inline constexpr std::uint32_t kGather = kReservedTagBase + 4;
inline constexpr std::uint32_t kAllgather = kReservedTagBase + 5;
inline constexpr std::uint32_t kAllgatherv = kReservedTagBase + 6;
inline constexpr std::uint32_t kAlltoallv = kReservedTagBase + 7;
/// The distributed join shuffles left and right sides on their own tags.
inline constexpr std::uint32_t kJoinLeft = kReservedTagBase + 8;
inline constexpr std::uint32_t kJoinRight = kReservedTagBase + 9;
}  // namespace tags

struct CommConfig {
  RetryPolicy connect_retry;
  /// PING period while an operation is blocked. Zero disables keepalive.
  Duration keepalive_interval = std::chrono::milliseconds(200);
  Duration op_timeout = std::chrono::seconds(60);

  void validate() const;
};

enum class RequestState { Pending, Complete, Failed };

/// Handle to a non-blocking send or receive. Copies share state.
class Request {
 public:
  Request() = default;
  RequestState state() const;
  bool valid() const { return impl_ != nullptr; }

 private:
  friend class Communicator;
  struct Impl;
  explicit Request(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<Impl> impl_;
};

struct CommStats {
  std::uint64_t data_frames_sent = 0;
  std::uint64_t data_bytes_sent = 0;
  std::uint64_t pings_sent = 0;
  std::uint64_t data_frames_received = 0;
};

/// One rank's endpoint in a full mesh of punched TCP connections.
///
/// Not thread-safe: a communicator belongs to the worker that created it.
/// Blocking calls drive progress on every connection, so traffic for other
/// operations is buffered while one waits.
class Communicator {
 public:
  /// Assembles a communicator from already-connected peer channels
  /// (index = rank, null for self). comm_init is the normal way in.
  Communicator(std::shared_ptr<net::Transport> transport, std::uint32_t rank, std::uint32_t world_size,
               std::vector<std::unique_ptr<net::FrameChannel>> peers, CommConfig config);
  ~Communicator();

  Communicator(const Communicator&) = delete;
  Communicator& operator=(const Communicator&) = delete;

  std::uint32_t rank() const { return rank_; }
  std::uint32_t world_size() const { return world_size_; }
  const CommConfig& config() const { return config_; }
  const CommStats& stats() const { return stats_; }
  std::size_t peer_count() const;
  net::Transport& transport() { return *transport_; }
  /// Time comm_init spent building this communicator (zero when assembled
  /// directly).
  Duration init_time() const { return init_time_; }

  // Point to point. Messages with equal (peer, tag) are matched FIFO.
  void send(std::uint32_t dst, std::uint32_t tag, ByteView data);
  Bytes recv(std::uint32_t src, std::uint32_t tag);
  Request isend(std::uint32_t dst, std::uint32_t tag, ByteView data);
  Request irecv(std::uint32_t src, std::uint32_t tag);
  /// Blocks until `r` settles. Returns received bytes (empty for sends);
  /// rethrows the request's error. Calling again returns the same outcome.
  Bytes wait(Request& r);
  /// Non-blocking check that also makes progress.
  bool test(Request& r);

  // Collectives. Every rank must call them in the same order.
  void barrier();
  Bytes bcast(std::uint32_t root, ByteView data);
  /// Root receives one entry per rank in rank order; others get an empty list.
  std::vector<Bytes> gather(std::uint32_t root, ByteView data);
  std::vector<Bytes> gatherv(std::uint32_t root, ByteView data);
  /// Every contribution must have the same size (SizeMismatch otherwise).
  std::vector<Bytes> allgather(ByteView data);
  std::vector<Bytes> allgatherv(ByteView data);
  /// out[i] goes to rank i; returns in[j] = what rank j addressed to us.
  std::vector<Bytes> alltoallv(const std::vector<Bytes>& out, std::uint32_t tag = tags::kAlltoallv);

  /// Closes every connection. Further operations throw Finalized; a second
  /// call does nothing. Throws OutstandingRequests while requests are pending.
  void finalize();
  bool finalized() const { return finalized_; }

 private:
  friend std::unique_ptr<Communicator> comm_init(std::shared_ptr<net::Transport>, const JobId&, const Endpoint&,
                                                 const Endpoint&, std::uint32_t, const CommConfig&);
  struct Peer {
    std::unique_ptr<net::FrameChannel> channel;
    bool closed = false;
  };

  void check_live() const;
  void check_rank(std::uint32_t r) const;
  Request post_send(std::uint32_t dst, std::uint32_t tag, ByteView data);
  Request post_recv(std::uint32_t src, std::uint32_t tag);
  void deliver(std::uint32_t src, std::uint32_t tag, Bytes payload);
  void progress();
  void on_peer_closed(std::uint32_t r);
  void settle_sends();
  template <class Pred>
  void block_until(Pred done, Duration deadline);
  void forget(const std::shared_ptr<Request::Impl>& impl);

  std::vector<Bytes> exchange_all(ByteView data, std::uint32_t tag);

  std::shared_ptr<net::Transport> transport_;
  std::uint32_t rank_;
  std::uint32_t world_size_;
  CommConfig config_;
  std::vector<Peer> peers_;
  std::list<std::shared_ptr<Request::Impl>> posted_recvs_;
  std::list<std::shared_ptr<Request::Impl>> pending_sends_;
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::deque<Bytes>> unexpected_;
  Duration next_ping_{};
  bool finalized_ = false;
  Duration init_time_{};
  CommStats stats_;
};

/// Bootstraps a rank: claims a rank from the KV store, registers with the
/// rendezvous from a shared listening port, publishes the registration,
/// punches to every peer and holds everyone at a barrier until the mesh is
/// complete. The coordination connections are closed before returning.
std::unique_ptr<Communicator> comm_init(std::shared_ptr<net::Transport> transport, const JobId& job,
                                        const Endpoint& kv_addr, const Endpoint& rendezvous_addr,
                                        std::uint32_t world_size, const CommConfig& config = {});

}  // namespace punchgrid::comm
