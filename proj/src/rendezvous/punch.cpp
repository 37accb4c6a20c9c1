#include <algorithm>
#include <cmath>
#include <sstream>

#include "punchgrid/rendezvous/rendezvous.hpp"

namespace punchgrid::rendezvous {

Duration RetryPolicy::delay(std::uint32_t k) const {
  const double ns = double(initial_delay.count()) * std::pow(backoff, double(k));
  return Duration(static_cast<Duration::rep>(ns));
}

Duration RetryPolicy::budget() const {
  Duration total{};
  for (std::uint32_t k = 0; k < max_attempts; ++k) total += delay(k);
  return total;
}

RendezvousClient::RendezvousClient(net::Transport& transport, const Endpoint& server, std::uint16_t local_port,
                                   Duration deadline)
    : transport_(transport), channel_(net::connect_with_retry(transport, server, deadline, local_port)) {}

PeerAddress RendezvousClient::register_worker(const JobId& job, std::uint32_t rank, std::uint32_t world_size,
                                              Duration deadline) {
  const auto text = job.str() + " " + std::to_string(rank) + " " + std::to_string(world_size);
  net::send_frame(transport_, channel_, wire::Frame{wire::MsgType::Register, rank, 0, to_bytes(text)}, deadline);
  while (true) {
    auto f = net::recv_frame(transport_, channel_, deadline);
    if (f.type != wire::MsgType::Register) continue;
    const auto reply = to_string(f.payload);
    if (!reply.starts_with("OK ")) raise_remote(reply, "register");
    return Endpoint::parse(reply.substr(3));
  }
}

PeerAddress RendezvousClient::peer_address(const JobId& job, std::uint32_t peer, Duration deadline) {
  const auto text = job.str() + " " + std::to_string(peer);
  net::send_frame(transport_, channel_, wire::Frame{wire::MsgType::PeerAddr, 0, peer, to_bytes(text)}, deadline);
  while (true) {
    auto f = net::recv_frame(transport_, channel_, deadline);
    if (f.type != wire::MsgType::PeerAddr || f.tag != peer) continue;
    const auto reply = to_string(f.payload);
    if (reply.starts_with("ERR ")) raise_remote(reply, "peer address");
    return Endpoint::parse(reply);
  }
}

namespace {

struct Candidate {
  std::unique_ptr<net::FrameChannel> channel;
  bool validated = false;  // the peer's hello arrived on it
};

struct PeerState {
  std::uint32_t rank = 0;
  std::optional<Endpoint> address;
  Duration budget_end{};
  std::uint32_t attempts = 0;
  Duration next_attempt{};
  std::unique_ptr<net::FrameChannel> pending;  // outbound attempt still connecting
  Duration pending_expires{};
  std::vector<Candidate> candidates;
  std::unique_ptr<net::FrameChannel> chosen;
};

class PunchEngine {
 public:
  PunchEngine(PunchSetup& s, const std::vector<std::uint32_t>& peers) : s_(s), t_(s.transport) {
    for (auto p : peers) {
      if (p == s.rank || p >= s.world_size) fail(ErrorCode::InvalidArgument, "cannot punch to rank " + std::to_string(p));
      peers_[p].rank = p;
    }
    hello_ = to_bytes(s.job.str() + " " + std::to_string(s.rank) + " " + std::to_string(s.world_size));
  }

  Connections run() {
    const auto start = t_.now();
    lookup_deadline_ = start + s_.lookup_timeout;
    next_ping_ = start + s_.keepalive_interval;
    auto& rdv = s_.rendezvous.channel();
    for (auto& [rank, p] : peers_) {
      rdv.post(wire::Frame{wire::MsgType::PeerAddr, s_.rank, rank,
                           to_bytes(s_.job.str() + " " + std::to_string(rank))});
    }
    rdv.flush();

    while (!all_done()) {
      pump_rendezvous();
      accept_new();
      for (auto& [rank, p] : peers_) step(p);
      if (all_done()) break;
      t_.wait_until(next_wake());
    }

    for (auto& c : strays_) c->close();
    Connections out;
    for (auto& [rank, p] : peers_) out.emplace(rank, std::move(p.chosen));
    return out;
  }

 private:
  bool all_done() const {
    return std::all_of(peers_.begin(), peers_.end(), [](const auto& kv) { return kv.second.chosen != nullptr; });
  }

  bool all_addressed() const {
    return std::all_of(peers_.begin(), peers_.end(), [](const auto& kv) { return kv.second.address.has_value(); });
  }

  void pump_rendezvous() {
    auto& rdv = s_.rendezvous.channel();
    const auto now = t_.now();
    if (s_.keepalive_interval > Duration::zero() && now >= next_ping_ && !rdv.closed()) {
      rdv.post(wire::Frame{wire::MsgType::Ping, s_.rank, 0, {}});
      next_ping_ = now + s_.keepalive_interval;
    }
    rdv.flush();
    while (auto f = rdv.poll()) {
      if (f->type == wire::MsgType::Ping) {
        rdv.post(wire::Frame{wire::MsgType::Pong, s_.rank, f->tag, {}});
        continue;
      }
      if (f->type != wire::MsgType::PeerAddr) continue;
      auto it = peers_.find(f->tag);
      if (it == peers_.end() || it->second.address) continue;
      const auto reply = to_string(f->payload);
      if (reply.starts_with("ERR ")) raise_remote(reply, "address of rank " + std::to_string(f->tag));
      auto& p = it->second;
      p.address = Endpoint::parse(reply);
      p.next_attempt = now;
      p.budget_end = now + s_.policy.budget();
    }
    rdv.flush();
    if (all_addressed()) return;
    if (rdv.closed()) fail(ErrorCode::PeerClosed, "rendezvous connection closed during address lookup");
    if (now >= lookup_deadline_) {
      for (auto& [rank, p] : peers_) {
        if (!p.address) fail(ErrorCode::Timeout, "rank " + std::to_string(rank) + " never registered with the rendezvous");
      }
    }
  }

  void accept_new() {
    while (auto s = s_.listener.try_accept()) strays_.push_back(std::make_unique<net::FrameChannel>(std::move(s)));
    // Only a connection arriving from the exact address the rendezvous relayed
    // counts; anything else came through a mapping the peer never advertised.
    const bool addressed = all_addressed();
    std::erase_if(strays_, [&](std::unique_ptr<net::FrameChannel>& ch) {
      const auto remote = ch->stream().remote();
      for (auto& [rank, p] : peers_) {
        if (p.address && *p.address == remote) {
          if (p.chosen) {
            ch->close();
          } else {
            add_candidate(p, std::move(ch));
          }
          return true;
        }
      }
      if (addressed || ch->closed()) {
        ch->close();
        return true;
      }
      return false;
    });
  }

  void add_candidate(PeerState& p, std::unique_ptr<net::FrameChannel> ch) {
    ch->post(wire::Frame{wire::MsgType::Register, s_.rank, 0, hello_});
    ch->flush();
    p.candidates.push_back(Candidate{std::move(ch)});
  }

  void step(PeerState& p) {
    if (p.chosen || !p.address) return;
    const auto now = t_.now();
    const bool have_validated =
        std::any_of(p.candidates.begin(), p.candidates.end(), [](const Candidate& c) { return c.validated; });

    if (p.pending) {
      const auto state = p.pending->stream().state();
      if (state == net::StreamState::Open) {
        add_candidate(p, std::move(p.pending));
      } else if (state != net::StreamState::Connecting || now >= p.pending_expires || have_validated) {
        p.pending->close();
        p.pending.reset();
      }
    }
    if (!p.pending && !have_validated && p.attempts < s_.policy.max_attempts && now >= p.next_attempt) {
      const auto window = s_.policy.delay(p.attempts++);
      p.pending = std::make_unique<net::FrameChannel>(t_.connect(*p.address, s_.listener.local().port));
      p.pending_expires = now + window;
      p.next_attempt = now + window;
      if (p.pending->stream().state() == net::StreamState::Open) add_candidate(p, std::move(p.pending));
    }

    for (auto& c : p.candidates) read_candidate(p, c);
    if (p.chosen) return finish(p);
    std::erase_if(p.candidates, [](Candidate& c) { return c.channel->closed(); });

    if (s_.rank < p.rank) {
      for (auto& c : p.candidates) {
        if (!c.validated) continue;
        c.channel->post(wire::Frame{wire::MsgType::Data, s_.rank, kTagPunchSelect, {}});
        c.channel->flush();
        p.chosen = std::move(c.channel);
        return finish(p);
      }
    }

    if (now >= p.budget_end) {
      fail(ErrorCode::HolePunchFailed, "rank " + std::to_string(s_.rank) + " could not reach rank " +
                                           std::to_string(p.rank) + " at " + p.address->str() + " after " +
                                           std::to_string(p.attempts) + " attempts");
    }
  }

  void read_candidate(PeerState& p, Candidate& c) {
    if (p.chosen || !c.channel) return;
    try {
      c.channel->flush();
      while (auto f = c.channel->poll()) {
        if (f->type == wire::MsgType::Register) {
          c.validated = f->src_rank == p.rank && f->payload.size() > 0 &&
                        to_string(f->payload).starts_with(s_.job.str() + " " + std::to_string(p.rank) + " ");
          if (!c.validated) {
            c.channel->close();
            return;
          }
        } else if (f->type == wire::MsgType::Ping) {
          c.channel->post(wire::Frame{wire::MsgType::Pong, s_.rank, f->tag, {}});
          c.channel->flush();
        } else if (f->type == wire::MsgType::Data && f->tag == kTagPunchSelect && c.validated && s_.rank > p.rank) {
          // Stop reading here: whatever follows belongs to the communicator.
          p.chosen = std::move(c.channel);
          return;
        }
      }
    } catch (const Error&) {
      c.channel->close();
    }
  }

  void finish(PeerState& p) {
    for (auto& c : p.candidates) {
      if (c.channel) c.channel->close();
    }
    p.candidates.clear();
    if (p.pending) {
      p.pending->close();
      p.pending.reset();
    }
  }

  Duration next_wake() const {
    const auto now = t_.now();
    Duration wake = now + std::chrono::seconds(1);
    if (!all_addressed()) wake = std::min(wake, lookup_deadline_);
    if (s_.keepalive_interval > Duration::zero()) wake = std::min(wake, next_ping_);
    for (const auto& [rank, p] : peers_) {
      if (p.chosen || !p.address) continue;
      wake = std::min(wake, p.budget_end);
      if (p.pending) wake = std::min(wake, p.pending_expires);
      else if (p.attempts < s_.policy.max_attempts) wake = std::min(wake, p.next_attempt);
    }
    return std::max(wake, now);
  }

  PunchSetup& s_;
  net::Transport& t_;
  std::map<std::uint32_t, PeerState> peers_;
  std::vector<std::unique_ptr<net::FrameChannel>> strays_;
  Bytes hello_;
  Duration lookup_deadline_{};
  Duration next_ping_{};
};

}  // namespace

Connections punch_all(PunchSetup& setup, const std::vector<std::uint32_t>& peers) {
  return PunchEngine(setup, peers).run();
}

std::unique_ptr<net::FrameChannel> punch_connect(PunchSetup& setup, std::uint32_t peer) {
  return std::move(punch_all(setup, {peer}).at(peer));
}

}  // namespace punchgrid::rendezvous
