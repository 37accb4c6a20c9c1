#include "punchgrid/comm/communicator.hpp"

#include <algorithm>

namespace punchgrid::comm {

void CommConfig::validate() const {
  if (op_timeout <= Duration::zero()) fail(ErrorCode::InvalidArgument, "op_timeout must be positive");
  if (keepalive_interval < Duration::zero() || keepalive_interval >= op_timeout)
    fail(ErrorCode::InvalidArgument, "keepalive_interval must be below op_timeout");
  if (connect_retry.max_attempts == 0) fail(ErrorCode::InvalidArgument, "retry policy needs at least one attempt");
}

struct Request::Impl {
  enum class Kind { Send, Recv } kind;
  std::uint32_t peer = 0;
  std::uint32_t tag = 0;
  RequestState state = RequestState::Pending;
  Bytes data;
  std::exception_ptr error;
  std::uint64_t flush_mark = 0;
};

RequestState Request::state() const { return impl_ ? impl_->state : RequestState::Failed; }

Communicator::Communicator(std::shared_ptr<net::Transport> transport, std::uint32_t rank, std::uint32_t world_size,
                           std::vector<std::unique_ptr<net::FrameChannel>> peers, CommConfig config)
    : transport_(std::move(transport)), rank_(rank), world_size_(world_size), config_(config) {
  config_.validate();
  if (world_size_ == 0 || rank_ >= world_size_) fail(ErrorCode::InvalidArgument, "rank out of range");
  if (peers.size() != world_size_) fail(ErrorCode::InvalidArgument, "need one peer slot per rank");
  peers_.resize(world_size_);
  for (std::uint32_t r = 0; r < world_size_; ++r) {
    if ((r == rank_) != (peers[r] == nullptr)) fail(ErrorCode::InvalidArgument, "peer slots must be filled except self");
    peers_[r].channel = std::move(peers[r]);
  }
}

Communicator::~Communicator() {
  for (auto& p : peers_) {
    if (p.channel) p.channel->close();
  }
}

std::size_t Communicator::peer_count() const {
  return std::count_if(peers_.begin(), peers_.end(), [](const Peer& p) { return p.channel && !p.closed; });
}

void Communicator::check_live() const {
  if (finalized_) fail(ErrorCode::Finalized, "communicator already finalized");
}

void Communicator::check_rank(std::uint32_t r) const {
  if (r >= world_size_) fail(ErrorCode::InvalidArgument, "rank " + std::to_string(r) + " out of range");
}

// --- progress -----------------------------------------------------------------

void Communicator::deliver(std::uint32_t src, std::uint32_t tag, Bytes payload) {
  for (auto it = posted_recvs_.begin(); it != posted_recvs_.end(); ++it) {
    auto& req = **it;
    if (req.peer == src && req.tag == tag) {
      req.data = std::move(payload);
      req.state = RequestState::Complete;
      posted_recvs_.erase(it);
      return;
    }
  }
  unexpected_[{src, tag}].push_back(std::move(payload));
}

void Communicator::on_peer_closed(std::uint32_t r) {
  if (peers_[r].closed) return;
  peers_[r].closed = true;
  const auto err = std::make_exception_ptr(
      Error(ErrorCode::PeerClosed, "rank " + std::to_string(rank_) + ": connection to rank " + std::to_string(r) + " closed"));
  for (auto* list : {&posted_recvs_, &pending_sends_}) {
    std::erase_if(*list, [&](const std::shared_ptr<Request::Impl>& req) {
      if (req->peer != r) return false;
      req->state = RequestState::Failed;
      req->error = err;
      return true;
    });
  }
}

void Communicator::settle_sends() {
  std::erase_if(pending_sends_, [&](const std::shared_ptr<Request::Impl>& req) {
    if (peers_[req->peer].channel->bytes_flushed() < req->flush_mark) return false;
    req->state = RequestState::Complete;
    return true;
  });
}

void Communicator::progress() {
  for (std::uint32_t r = 0; r < world_size_; ++r) {
    auto& p = peers_[r];
    if (!p.channel || p.closed) continue;
    try {
      p.channel->flush();
      while (auto f = p.channel->poll()) {
        switch (f->type) {
          case wire::MsgType::Ping:
            p.channel->post(wire::Frame{wire::MsgType::Pong, rank_, f->tag, {}});
            break;
          case wire::MsgType::Data:
            ++stats_.data_frames_received;
            deliver(r, f->tag, std::move(f->payload));
            break;
          default: break;  // PONGs and stray handshake frames carry nothing for us
        }
      }
      p.channel->flush();
    } catch (const Error&) {
      p.channel->close();  // undecodable stream: treat as a dead peer
    }
    if (p.channel->closed()) on_peer_closed(r);
  }
  settle_sends();
}

template <class Pred>
void Communicator::block_until(Pred done, Duration deadline) {
  auto& t = *transport_;
  const bool keepalive = config_.keepalive_interval > Duration::zero();
  if (keepalive && next_ping_ < t.now()) next_ping_ = t.now() + config_.keepalive_interval;
  while (true) {
    progress();
    if (done()) return;
    const auto now = t.now();
    if (now >= deadline) fail(ErrorCode::Timeout, "rank " + std::to_string(rank_) + ": operation timed out");
    if (keepalive && now >= next_ping_) {
      for (auto& p : peers_) {
        if (!p.channel || p.closed) continue;
        p.channel->post(wire::Frame{wire::MsgType::Ping, rank_, 0, {}});
        p.channel->flush();
        ++stats_.pings_sent;
      }
      next_ping_ = now + config_.keepalive_interval;
    }
    t.wait_until(keepalive ? std::min(deadline, next_ping_) : deadline);
  }
}

void Communicator::forget(const std::shared_ptr<Request::Impl>& impl) {
  posted_recvs_.remove(impl);
  pending_sends_.remove(impl);
}

// --- point to point -----------------------------------------------------------

Request Communicator::post_send(std::uint32_t dst, std::uint32_t tag, ByteView data) {
  check_live();
  check_rank(dst);
  auto req = std::make_shared<Request::Impl>();
  req->kind = Request::Impl::Kind::Send;
  req->peer = dst;
  req->tag = tag;
  if (dst == rank_) {
    deliver(rank_, tag, Bytes(data.begin(), data.end()));
    req->state = RequestState::Complete;
    return Request(req);
  }
  auto& p = peers_[dst];
  if (p.closed) fail(ErrorCode::PeerClosed, "connection to rank " + std::to_string(dst) + " is closed");
  p.channel->post(wire::Frame{wire::MsgType::Data, rank_, tag, Bytes(data.begin(), data.end())});
  ++stats_.data_frames_sent;
  stats_.data_bytes_sent += data.size();
  req->flush_mark = p.channel->bytes_posted();
  p.channel->flush();
  if (p.channel->bytes_flushed() >= req->flush_mark) {
    req->state = RequestState::Complete;
  } else {
    pending_sends_.push_back(req);
  }
  return Request(req);
}

Request Communicator::post_recv(std::uint32_t src, std::uint32_t tag) {
  check_live();
  check_rank(src);
  auto req = std::make_shared<Request::Impl>();
  req->kind = Request::Impl::Kind::Recv;
  req->peer = src;
  req->tag = tag;
  if (auto it = unexpected_.find({src, tag}); it != unexpected_.end()) {
    req->data = std::move(it->second.front());
    it->second.pop_front();
    if (it->second.empty()) unexpected_.erase(it);
    req->state = RequestState::Complete;
  } else if (src != rank_ && peers_[src].closed) {
    req->state = RequestState::Failed;
    req->error = std::make_exception_ptr(
        Error(ErrorCode::PeerClosed, "connection to rank " + std::to_string(src) + " is closed"));
  } else {
    posted_recvs_.push_back(req);
  }
  return Request(req);
}

Request Communicator::isend(std::uint32_t dst, std::uint32_t tag, ByteView data) { return post_send(dst, tag, data); }
Request Communicator::irecv(std::uint32_t src, std::uint32_t tag) { return post_recv(src, tag); }

Bytes Communicator::wait(Request& r) {
  if (!r.impl_) fail(ErrorCode::InvalidArgument, "wait on an empty request");
  auto impl = r.impl_;
  if (impl->state == RequestState::Pending) {
    try {
      block_until([&] { return impl->state != RequestState::Pending; }, transport_->now() + config_.op_timeout);
    } catch (const Error&) {
      if (impl->state == RequestState::Pending) {
        forget(impl);
        impl->state = RequestState::Failed;
        impl->error = std::current_exception();
      }
    }
  }
  if (impl->state == RequestState::Failed) std::rethrow_exception(impl->error);
  return impl->data;
}

bool Communicator::test(Request& r) {
  if (!r.impl_) fail(ErrorCode::InvalidArgument, "test on an empty request");
  if (r.impl_->state == RequestState::Pending && !finalized_) progress();
  return r.impl_->state != RequestState::Pending;
}

void Communicator::send(std::uint32_t dst, std::uint32_t tag, ByteView data) {
  auto r = post_send(dst, tag, data);
  wait(r);
}

Bytes Communicator::recv(std::uint32_t src, std::uint32_t tag) {
  auto r = post_recv(src, tag);
  return wait(r);
}

// --- collectives ----------------------------------------------------------------

namespace {

Bytes one_buffer(ByteView data) { return wire::encode_buffers({Bytes(data.begin(), data.end())}); }

Bytes from_one_buffer(ByteView payload) {
  auto set = wire::decode_buffers(payload);
  if (set.size() != 1) fail(ErrorCode::ProtocolError, "collective payload must hold exactly one buffer");
  return std::move(set.front());
}

}  // namespace

void Communicator::barrier() {
  check_live();
  if (world_size_ == 1) return;
  if (rank_ == 0) {
    std::vector<Request> tokens;
    for (std::uint32_t r = 1; r < world_size_; ++r) tokens.push_back(post_recv(r, tags::kBarrier));
    for (auto& t : tokens) wait(t);
    std::vector<Request> releases;
    for (std::uint32_t r = 1; r < world_size_; ++r) releases.push_back(post_send(r, tags::kBarrierRelease, {}));
    for (auto& s : releases) wait(s);
  } else {
    send(0, tags::kBarrier, {});
    recv(0, tags::kBarrierRelease);
  }
}

Bytes Communicator::bcast(std::uint32_t root, ByteView data) {
  check_live();
  check_rank(root);
  if (rank_ != root) return from_one_buffer(recv(root, tags::kBcast));
  const auto payload = one_buffer(data);
  std::vector<Request> sends;
  for (std::uint32_t r = 0; r < world_size_; ++r) {
    if (r != root) sends.push_back(post_send(r, tags::kBcast, payload));
  }
  for (auto& s : sends) wait(s);
  return Bytes(data.begin(), data.end());
}

std::vector<Bytes> Communicator::gatherv(std::uint32_t root, ByteView data) {
  check_live();
  check_rank(root);
  if (rank_ != root) {
    send(root, tags::kGather, one_buffer(data));
    return {};
  }
  std::vector<Request> recvs(world_size_);
  for (std::uint32_t r = 0; r < world_size_; ++r) {
    if (r != root) recvs[r] = post_recv(r, tags::kGather);
  }
  std::vector<Bytes> out(world_size_);
  for (std::uint32_t r = 0; r < world_size_; ++r) {
    out[r] = r == root ? Bytes(data.begin(), data.end()) : from_one_buffer(wait(recvs[r]));
  }
  return out;
}

std::vector<Bytes> Communicator::gather(std::uint32_t root, ByteView data) { return gatherv(root, data); }

std::vector<Bytes> Communicator::exchange_all(ByteView data, std::uint32_t tag) {
  const auto payload = one_buffer(data);
  std::vector<Request> recvs(world_size_);
  for (std::uint32_t r = 0; r < world_size_; ++r) {
    if (r != rank_) recvs[r] = post_recv(r, tag);
  }
  std::vector<Request> sends;
  for (std::uint32_t r = 0; r < world_size_; ++r) {
    if (r != rank_) sends.push_back(post_send(r, tag, payload));
  }
  std::vector<Bytes> out(world_size_);
  for (std::uint32_t r = 0; r < world_size_; ++r) {
    out[r] = r == rank_ ? Bytes(data.begin(), data.end()) : from_one_buffer(wait(recvs[r]));
  }
  for (auto& s : sends) wait(s);
  return out;
}

std::vector<Bytes> Communicator::allgather(ByteView data) {
  check_live();
  auto out = exchange_all(data, tags::kAllgather);
  for (std::uint32_t r = 0; r < world_size_; ++r) {
    if (out[r].size() != data.size())
      fail(ErrorCode::SizeMismatch, "allgather: rank " + std::to_string(r) + " contributed " +
                                        std::to_string(out[r].size()) + " bytes, rank " + std::to_string(rank_) +
                                        " contributed " + std::to_string(data.size()));
  }
  return out;
}

std::vector<Bytes> Communicator::allgatherv(ByteView data) {
  check_live();
  Bytes len;
  put_le<std::uint64_t>(len, data.size());
  const auto lengths = allgather(len);
  auto out = exchange_all(data, tags::kAllgatherv);
  for (std::uint32_t r = 0; r < world_size_; ++r) {
    ByteReader rd(lengths[r], ErrorCode::Truncated);
    if (rd.read<std::uint64_t>() != out[r].size())
      fail(ErrorCode::LengthMismatch, "allgatherv: rank " + std::to_string(r) + " announced a different length");
  }
  return out;
}

std::vector<Bytes> Communicator::alltoallv(const std::vector<Bytes>& out, std::uint32_t tag) {
  check_live();
  if (out.size() != world_size_)
    fail(ErrorCode::InvalidArgument, "alltoallv needs " + std::to_string(world_size_) + " outgoing buffers");
  std::vector<Bytes> in(world_size_);
  in[rank_] = out[rank_];  // never touches the network
  for (std::uint32_t s = 1; s < world_size_; ++s) {
    const auto to = (rank_ + s) % world_size_;
    const auto from = (rank_ + world_size_ - s) % world_size_;
    if (rank_ < to) {
      send(to, tag, one_buffer(out[to]));
      in[from] = from_one_buffer(recv(from, tag));
    } else {
      in[from] = from_one_buffer(recv(from, tag));
      send(to, tag, one_buffer(out[to]));
    }
  }
  return in;
}

void Communicator::finalize() {
  if (finalized_) return;
  const bool outstanding = std::any_of(posted_recvs_.begin(), posted_recvs_.end(),
                                       [](const auto& r) { return r->state == RequestState::Pending; }) ||
                           std::any_of(pending_sends_.begin(), pending_sends_.end(),
                                       [](const auto& r) { return r->state == RequestState::Pending; });
  if (outstanding) fail(ErrorCode::OutstandingRequests, "finalize with pending requests");
  finalized_ = true;

  // Half-close everywhere, then read until every peer has done the same.
  // Closing with unread input would make a real TCP stack answer with RST and
  // could destroy data the peer has not consumed yet.
  auto& t = *transport_;
  const auto deadline = t.now() + config_.op_timeout;
  for (auto& p : peers_) {
    if (!p.channel || p.closed) continue;
    p.channel->flush();
    p.channel->shutdown_write();
  }
  while (true) {
    bool open = false;
    for (auto& p : peers_) {
      if (!p.channel || p.closed) continue;
      try {
        while (p.channel->poll()) {
        }
      } catch (const Error&) {
        p.closed = true;
      }
      if (p.channel->closed()) p.closed = true;
      open = open || !p.closed;
    }
    if (!open || t.now() >= deadline) break;
    t.wait_until(deadline);
  }
  for (auto& p : peers_) {
    if (!p.channel) continue;
    p.channel->close();
    p.closed = true;
  }
}

}  // namespace punchgrid::comm
