#include "punchgrid/net/frame_channel.hpp"

#include <array>

namespace punchgrid::net {

void FrameChannel::post(const wire::Frame& f) {
  if (out_head_ == out_.size()) {
    out_.clear();
    out_head_ = 0;
  }
  const auto before = out_.size();
  wire::encode_frame_into(f, out_);
  bytes_posted_ += out_.size() - before;
  ++frames_sent_;
}

bool FrameChannel::flush() {
  while (out_head_ < out_.size()) {
    const auto n = stream_->write_some(ByteView(out_).subspan(out_head_));
    if (n == 0) break;
    out_head_ += n;
    bytes_flushed_ += n;
  }
  if (out_head_ == out_.size()) {
    out_.clear();
    out_head_ = 0;
    return true;
  }
  // Compact once the consumed prefix dominates.
  if (out_head_ > (1u << 20) && out_head_ * 2 > out_.size()) {
    out_.erase(out_.begin(), out_.begin() + static_cast<std::ptrdiff_t>(out_head_));
    out_head_ = 0;
  }
  return false;
}

void FrameChannel::fill() {
  std::array<std::uint8_t, 64 * 1024> buf;
  while (true) {
    const auto n = stream_->read_some(buf);
    if (n == 0) break;
    in_.insert(in_.end(), buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(n));
  }
}

std::optional<wire::Frame> FrameChannel::poll() {
  auto try_take = [&]() -> std::optional<wire::Frame> {
    auto got = wire::try_decode_frame(ByteView(in_).subspan(in_head_));
    if (!got) return std::nullopt;
    in_head_ += got->second;
    if (in_head_ == in_.size()) {
      in_.clear();
      in_head_ = 0;
    } else if (in_head_ > (1u << 20) && in_head_ * 2 > in_.size()) {
      in_.erase(in_.begin(), in_.begin() + static_cast<std::ptrdiff_t>(in_head_));
      in_head_ = 0;
    }
    return std::move(got->first);
  };
  if (auto f = try_take()) return f;
  fill();
  return try_take();
}

bool FrameChannel::closed() {
  const auto s = stream_->state();
  if (s != StreamState::Closed && s != StreamState::Failed) return false;
  return !wire::try_decode_frame(ByteView(in_).subspan(in_head_)).has_value();
}

void send_frame(Transport& t, FrameChannel& ch, const wire::Frame& f, Duration deadline) {
  ch.post(f);
  while (!ch.flush()) {
    if (ch.closed()) fail(ErrorCode::PeerClosed, "stream closed while sending to " + ch.stream().remote().str());
    if (t.now() >= deadline) fail(ErrorCode::Timeout, "send to " + ch.stream().remote().str());
    t.wait_until(deadline);
  }
}

wire::Frame recv_frame(Transport& t, FrameChannel& ch, Duration deadline) {
  while (true) {
    ch.flush();
    while (auto f = ch.poll()) {
      if (f->type == wire::MsgType::Ping) {
        ch.post(wire::Frame{wire::MsgType::Pong, f->src_rank, f->tag, {}});
        ch.flush();
        continue;
      }
      if (f->type == wire::MsgType::Pong) continue;
      return std::move(*f);
    }
    if (ch.closed()) fail(ErrorCode::PeerClosed, "stream from " + ch.stream().remote().str() + " closed");
    if (t.now() >= deadline) fail(ErrorCode::Timeout, "waiting for frame from " + ch.stream().remote().str());
    t.wait_until(deadline);
  }
}

std::unique_ptr<Stream> connect_with_retry(Transport& t, const Endpoint& remote, Duration deadline,
                                           std::uint16_t local_port, Duration retry_interval) {
  while (true) {
    try {
      return connect_blocking(t, remote, deadline, local_port);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ConnectFailed) throw;
      if (t.now() + retry_interval >= deadline) fail(ErrorCode::Timeout, std::string("giving up: ") + e.what());
      t.sleep_for(retry_interval);
    }
  }
}

std::unique_ptr<Stream> connect_blocking(Transport& t, const Endpoint& remote, Duration deadline,
                                         std::uint16_t local_port) {
  auto s = t.connect(remote, local_port);
  while (true) {
    switch (s->state()) {
      case StreamState::Open: return s;
      case StreamState::Connecting: break;
      default: fail(ErrorCode::ConnectFailed, "connect to " + remote.str() + " refused");
    }
    if (t.now() >= deadline) fail(ErrorCode::Timeout, "connect to " + remote.str());
    t.wait_until(deadline);
  }
}

}  // namespace punchgrid::net
