#pragma once

#include <map>
#include <memory>
#include <optional>
#include <stop_token>
#include <string>
#include <vector>

#include "punchgrid/net/frame_channel.hpp"
#include "punchgrid/net/transport.hpp"

namespace punchgrid::bootstrap {

using net::Duration;
using net::Endpoint;

/// Coordination store speaking KV_CMD/KV_REPLY frames. Commands are
/// space-separated UTF-8 text:
///   INCR <key>            -> "OK <value before increment>"
///   GET <key>             -> "OK <base64>" | "NIL"
///   SET <key> <base64>    -> "OK"
///   DEL <prefix>          -> "OK <keys removed>"
///   LOCK <name> <rank>    -> "OK" once granted (deferred), "ERR LockHeld ..."
///   UNLOCK <name> <rank>  -> "OK" | "ERR NotLockHolder ..."
/// A reply echoes the request frame's tag. Locks are granted to the lowest
/// waiting rank whenever the holder releases.
///
/// Single-threaded: every mutation runs on the thread calling poll/run, so
/// commands are linearizable.
class KvServer {
 public:
  KvServer(std::shared_ptr<net::Transport> transport, std::uint16_t port);
  ~KvServer();

  Endpoint local() const;

  /// Accepts, reads and answers until `deadline`.
  void poll(Duration deadline);
  void run(std::stop_token stop = {});

  std::size_t key_count() const { return store_.size(); }

 private:
  struct Client;
  struct LockState {
    std::optional<std::uint32_t> holder;
    std::uint64_t holder_client = 0;
    std::map<std::uint32_t, std::pair<std::uint64_t, std::uint32_t>> waiters;  // rank -> (client, tag)
  };

  void handle(Client& c, const wire::Frame& f);
  std::string execute(Client& c, const std::vector<std::string>& argv, std::uint32_t tag, bool& deferred);
  void grant_next(const std::string& name, LockState& lock);
  void reply(std::uint64_t client_id, std::uint32_t tag, const std::string& text);
  void drop_client(Client& c);

  std::shared_ptr<net::Transport> transport_;
  std::unique_ptr<net::Listener> listener_;
  std::map<std::uint64_t, std::unique_ptr<Client>> clients_;
  std::uint64_t next_client_ = 1;
  std::map<std::string, std::string> store_;
  std::map<std::string, LockState> locks_;
};

/// Blocking client for KvServer. One outstanding request at a time.
class KvClient {
 public:
  KvClient(net::Transport& transport, const Endpoint& server, Duration timeout = std::chrono::seconds(30));

  std::int64_t incr(const std::string& key);
  std::optional<Bytes> get(const std::string& key);
  void set(const std::string& key, ByteView value);
  std::size_t del(const std::string& prefix);
  void lock(const std::string& name, std::uint32_t rank, Duration timeout);
  void unlock(const std::string& name, std::uint32_t rank);

  net::Transport& transport() { return transport_; }
  void close() { channel_.close(); }

 private:
  std::string request(const std::string& command, Duration deadline);

  net::Transport& transport_;
  net::FrameChannel channel_;
  Duration timeout_;
  std::uint32_t next_tag_ = 1;
};

}  // namespace punchgrid::bootstrap
