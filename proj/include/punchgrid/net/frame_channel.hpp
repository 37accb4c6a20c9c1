#pragma once

#include <deque>
#include <memory>
#include <optional>

#include "punchgrid/net/transport.hpp"
#include "punchgrid/wire.hpp"

namespace punchgrid::net {

/// Frames over a Stream: an outbound byte queue plus an incremental decoder.
/// Everything is non-blocking; the blocking helpers below loop on
/// Transport::wait_until.
class FrameChannel {
 public:
  explicit FrameChannel(std::unique_ptr<Stream> stream) : stream_(std::move(stream)) {}

  void post(const wire::Frame& f);

  /// Writes as much queued output as the stream accepts. True once drained.
  bool flush();
  bool has_pending_output() const { return out_head_ < out_.size(); }

  /// Pulls available bytes and returns the next complete frame, if any.
  std::optional<wire::Frame> poll();

  /// True when the peer has gone away (EOF or reset) and no buffered frame is
  /// left to hand out.
  bool closed();
  bool connecting() { return stream_->state() == StreamState::Connecting; }

  Stream& stream() { return *stream_; }
  void close() { stream_->close(); }
  void shutdown_write() { stream_->shutdown_write(); }

  std::uint64_t frames_sent() const { return frames_sent_; }
  /// Running byte counters; a post is on the wire once bytes_flushed reaches
  /// the bytes_posted value observed right after it.
  std::uint64_t bytes_posted() const { return bytes_posted_; }
  std::uint64_t bytes_flushed() const { return bytes_flushed_; }

 private:
  void fill();

  std::unique_ptr<Stream> stream_;
  Bytes out_;
  std::size_t out_head_ = 0;
  Bytes in_;
  std::size_t in_head_ = 0;
  std::uint64_t frames_sent_ = 0;
  std::uint64_t bytes_posted_ = 0;
  std::uint64_t bytes_flushed_ = 0;
};

/// Sends `f` and blocks until it is fully written or `deadline` passes.
void send_frame(Transport& t, FrameChannel& ch, const wire::Frame& f, Duration deadline);

/// Blocks for the next frame, answering PINGs and skipping PONGs on the way.
wire::Frame recv_frame(Transport& t, FrameChannel& ch, Duration deadline);

/// Blocks until a fresh outbound stream finishes connecting.
std::unique_ptr<Stream> connect_blocking(Transport& t, const Endpoint& remote, Duration deadline,
                                         std::uint16_t local_port = 0);

/// connect_blocking that retries refused connects until `deadline`, then
/// reports Timeout (a server that is not up yet looks the same as one that
/// never comes up).
std::unique_ptr<Stream> connect_with_retry(Transport& t, const Endpoint& remote, Duration deadline,
                                           std::uint16_t local_port = 0,
                                           Duration retry_interval = std::chrono::milliseconds(100));

}  // namespace punchgrid::net
