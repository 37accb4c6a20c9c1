#include "punchgrid/rendezvous/rendezvous.hpp"

#include <charconv>
#include <sstream>

namespace punchgrid::rendezvous {

namespace {

std::vector<std::string> words(ByteView payload) {
  std::istringstream in(to_string(payload));
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(std::move(w));
  return out;
}

std::optional<std::uint32_t> parse_u32(const std::string& s) {
  std::uint32_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace

struct RendezvousServer::Client {
  std::uint64_t id;
  net::FrameChannel channel;
};

RendezvousServer::RendezvousServer(std::shared_ptr<net::Transport> transport, std::uint16_t port, Duration hold_timeout)
    : transport_(std::move(transport)), listener_(transport_->listen(port)), hold_timeout_(hold_timeout) {}

RendezvousServer::~RendezvousServer() = default;

Endpoint RendezvousServer::local() const { return listener_->local(); }

void RendezvousServer::run(std::stop_token stop) {
  while (!stop.stop_requested()) poll(transport_->now() + std::chrono::milliseconds(50));
}

std::optional<TranslationEntry> RendezvousServer::lookup(const JobId& job, std::uint32_t rank) const {
  auto it = table_.find({job.str(), rank});
  if (it == table_.end()) return std::nullopt;
  return it->second.entry;
}

void RendezvousServer::poll(Duration deadline) {
  while (true) {
    bool progressed = false;
    while (auto s = listener_->try_accept()) {
      const auto id = next_client_++;
      clients_.emplace(id, std::make_unique<Client>(Client{id, net::FrameChannel(std::move(s))}));
      progressed = true;
    }
    for (auto it = clients_.begin(); it != clients_.end();) {
      Client& c = *it->second;
      try {
        while (auto f = c.channel.poll()) {
          handle(c, *f);
          progressed = true;
        }
      } catch (const Error&) {
        c.channel.close();  // garbage on the wire: drop the client
      }
      c.channel.flush();
      if (c.channel.closed()) {
        std::erase_if(table_, [&](const auto& kv) { return kv.second.owner == c.id; });
        std::erase_if(held_, [&](const Held& h) { return h.client == c.id; });
        it = clients_.erase(it);
        progressed = true;
      } else {
        ++it;
      }
    }
    answer_held();

    if (!progressed) {
      auto wake = deadline;
      for (const auto& h : held_) wake = std::min(wake, h.expires);
      if (transport_->now() >= deadline) return;
      transport_->wait_until(wake);
    }
  }
}

void RendezvousServer::handle(Client& c, const wire::Frame& f) {
  switch (f.type) {
    case wire::MsgType::Ping: c.channel.post(wire::Frame{wire::MsgType::Pong, 0, f.tag, {}}); break;
    case wire::MsgType::Pong: break;
    case wire::MsgType::Register: on_register(c, f); break;
    case wire::MsgType::PeerAddr: on_peer_addr(c, f); break;
    default:
      c.channel.post(wire::Frame{f.type, 0, f.tag, to_bytes("ERR ProtocolError unexpected message type")});
  }
}

void RendezvousServer::on_register(Client& c, const wire::Frame& f) {
  auto reply = [&](const std::string& text) { c.channel.post(wire::Frame{wire::MsgType::Register, 0, f.tag, to_bytes(text)}); };
  const auto w = words(f.payload);
  std::optional<std::uint32_t> rank, world;
  if (w.size() == 3) {
    rank = parse_u32(w[1]);
    world = parse_u32(w[2]);
  }
  if (!rank || !world || *world == 0 || *rank >= *world) return reply("ERR ProtocolError expected 'job rank world_size'");
  try {
    JobId job(w[0]);
    const auto observed = c.channel.stream().remote();
    const auto key = std::make_pair(job.str(), *rank);
    if (auto it = table_.find(key); it != table_.end()) {
      if (it->second.entry.external != observed)
        return reply("ERR DuplicateRank rank " + w[1] + " of job " + w[0] + " already registered from " +
                     it->second.entry.external.str());
      it->second.owner = c.id;
    } else {
      table_.emplace(key, Slot{TranslationEntry{job, *rank, observed, *world, transport_->now()}, c.id});
    }
    reply("OK " + observed.str());
  } catch (const Error& e) {
    reply(std::string("ERR ") + e.what());
  }
}

void RendezvousServer::on_peer_addr(Client& c, const wire::Frame& f) {
  const auto w = words(f.payload);
  std::optional<std::uint32_t> peer;
  if (w.size() == 2) peer = parse_u32(w[1]);
  if (!peer) {
    c.channel.post(wire::Frame{wire::MsgType::PeerAddr, 0, f.tag, to_bytes("ERR ProtocolError expected 'job peer_rank'")});
    return;
  }
  held_.push_back(Held{c.id, f.tag, w[0], *peer, transport_->now() + hold_timeout_});
}

void RendezvousServer::answer_held() {
  const auto now = transport_->now();
  std::erase_if(held_, [&](const Held& h) {
    auto it = table_.find({h.job, h.rank});
    if (it != table_.end()) {
      send_to(h.client, wire::Frame{wire::MsgType::PeerAddr, 0, h.tag, to_bytes(it->second.entry.external.str())});
      return true;
    }
    if (now >= h.expires) {
      send_to(h.client, wire::Frame{wire::MsgType::PeerAddr, 0, h.tag,
                                    to_bytes("ERR Timeout rank " + std::to_string(h.rank) + " never registered")});
      return true;
    }
    return false;
  });
}

void RendezvousServer::send_to(std::uint64_t client, const wire::Frame& f) {
  auto it = clients_.find(client);
  if (it == clients_.end()) return;
  it->second->channel.post(f);
  it->second->channel.flush();
}

}  // namespace punchgrid::rendezvous
