#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>

#include "punchgrid/bytes.hpp"
#include "punchgrid/net/endpoint.hpp"

namespace punchgrid::net {

/// Monotonic time since an arbitrary, transport-defined origin. The real TCP
/// transport reads steady_clock; natsim reads its virtual clock.
using Duration = std::chrono::nanoseconds;
using std::chrono::milliseconds;

enum class StreamState { Connecting, Open, Closed, Failed };

/// A full-duplex byte stream. All operations are non-blocking; callers block
/// through Transport::wait.
class Stream {
 public:
  virtual ~Stream() = default;

  virtual StreamState state() = 0;

  /// Returns bytes accepted, 0 when the send side would block.
  virtual std::size_t write_some(ByteView data) = 0;

  /// Returns bytes read; 0 means nothing available right now. End of stream
  /// or reset shows up through state().
  virtual std::size_t read_some(std::span<std::uint8_t> out) = 0;

  virtual Endpoint local() const = 0;
  virtual Endpoint remote() const = 0;

  /// Sends FIN after everything written so far; reading continues until the
  /// peer closes its side.
  virtual void shutdown_write() = 0;
  virtual void close() = 0;
};

class Listener {
 public:
  virtual ~Listener() = default;
  virtual std::unique_ptr<Stream> try_accept() = 0;
  virtual Endpoint local() const = 0;
};

/// One worker's view of the network: a socket factory plus a clock and a way
/// to block until something happens on any socket it created.
class Transport {
 public:
  virtual ~Transport() = default;

  /// Port 0 picks a free port. With `shared_port` the listener and later
  /// outbound connects from the same port coexist (hole punching depends on
  /// it); servers listen exclusively so a second bind fails.
  virtual std::unique_ptr<Listener> listen(std::uint16_t port, bool shared_port = false) = 0;

  /// Starts a non-blocking connect from `local_port` (0 = ephemeral).
  virtual std::unique_ptr<Stream> connect(const Endpoint& remote, std::uint16_t local_port) = 0;

  virtual Duration now() const = 0;

  /// Blocks until activity on any socket of this transport, or `deadline`.
  /// Spurious returns are allowed.
  virtual void wait_until(Duration deadline) = 0;

  virtual void sleep_until(Duration deadline) = 0;

  void sleep_for(Duration d) { sleep_until(now() + d); }
};

}  // namespace punchgrid::net
