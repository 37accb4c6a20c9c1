#include "punchgrid/bootstrap/kv.hpp"

#include <charconv>
#include <sstream>

namespace punchgrid::bootstrap {

namespace {

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string w; in >> w;) out.push_back(std::move(w));
  return out;
}

template <class T>
std::optional<T> parse_int(std::string_view s) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace

struct KvServer::Client {
  std::uint64_t id;
  net::FrameChannel channel;
};

KvServer::KvServer(std::shared_ptr<net::Transport> transport, std::uint16_t port)
    : transport_(std::move(transport)), listener_(transport_->listen(port)) {}

KvServer::~KvServer() = default;

Endpoint KvServer::local() const { return listener_->local(); }

void KvServer::run(std::stop_token stop) {
  while (!stop.stop_requested()) poll(transport_->now() + std::chrono::milliseconds(50));
}

void KvServer::poll(Duration deadline) {
  while (true) {
    bool progressed = false;
    while (auto s = listener_->try_accept()) {
      const auto id = next_client_++;
      clients_.emplace(id, std::make_unique<Client>(Client{id, net::FrameChannel(std::move(s))}));
      progressed = true;
    }
    for (auto it = clients_.begin(); it != clients_.end();) {
      Client& c = *it->second;
      while (auto f = c.channel.poll()) {
        handle(c, *f);
        progressed = true;
      }
      c.channel.flush();
      if (c.channel.closed()) {
        drop_client(c);
        it = clients_.erase(it);
        progressed = true;
      } else {
        ++it;
      }
    }
    if (!progressed) {
      if (transport_->now() >= deadline) return;
      transport_->wait_until(deadline);
    }
  }
}

void KvServer::handle(Client& c, const wire::Frame& f) {
  switch (f.type) {
    case wire::MsgType::Ping:
      c.channel.post(wire::Frame{wire::MsgType::Pong, 0, f.tag, {}});
      return;
    case wire::MsgType::KvCmd: break;
    default:
      c.channel.post(wire::Frame{wire::MsgType::KvReply, 0, f.tag, to_bytes("ERR ProtocolError unexpected frame")});
      return;
  }
  bool deferred = false;
  std::string text;
  try {
    text = execute(c, split_words(to_string(f.payload)), f.tag, deferred);
  } catch (const Error& e) {
    text = std::string("ERR ") + e.what();
  }
  if (!deferred) c.channel.post(wire::Frame{wire::MsgType::KvReply, 0, f.tag, to_bytes(text)});
}

std::string KvServer::execute(Client& c, const std::vector<std::string>& argv, std::uint32_t tag, bool& deferred) {
  auto need = [&](std::size_t n) {
    if (argv.size() != n) fail(ErrorCode::ProtocolError, "bad arity");
  };
  auto rank_arg = [&](const std::string& s) {
    auto r = parse_int<std::uint32_t>(s);
    if (!r) fail(ErrorCode::ProtocolError, "bad rank");
    return *r;
  };
  if (argv.empty()) fail(ErrorCode::ProtocolError, "empty command");
  const auto& cmd = argv[0];

  if (cmd == "INCR") {
    need(2);
    auto& slot = store_[argv[1]];
    std::int64_t old = 0;
    if (!slot.empty()) {
      auto v = parse_int<std::int64_t>(slot);
      if (!v) fail(ErrorCode::ProtocolError, "value is not an integer");
      old = *v;
    }
    slot = std::to_string(old + 1);
    return "OK " + std::to_string(old);
  }
  if (cmd == "GET") {
    need(2);
    auto it = store_.find(argv[1]);
    if (it == store_.end()) return "NIL";
    return "OK " + base64_encode(to_bytes(it->second));
  }
  if (cmd == "SET") {
    if (argv.size() == 2) {
      store_[argv[1]].clear();
      return "OK";
    }
    need(3);
    store_[argv[1]] = to_string(base64_decode(argv[2]));
    return "OK";
  }
  if (cmd == "DEL") {
    need(2);
    const auto& prefix = argv[1];
    std::size_t n = 0;
    for (auto it = store_.lower_bound(prefix); it != store_.end() && it->first.starts_with(prefix);) {
      it = store_.erase(it);
      ++n;
    }
    // Lock state under the prefix goes too; pending waiters are told why.
    for (auto it = locks_.lower_bound(prefix); it != locks_.end() && it->first.starts_with(prefix);) {
      for (const auto& [rank, who] : it->second.waiters) reply(who.first, who.second, "ERR Cancelled lock cleared");
      it = locks_.erase(it);
    }
    return "OK " + std::to_string(n);
  }
  if (cmd == "LOCK") {
    need(3);
    const auto rank = rank_arg(argv[2]);
    auto& lock = locks_[argv[1]];
    if (lock.holder == rank || lock.waiters.contains(rank))
      fail(ErrorCode::LockHeld, "rank " + std::to_string(rank) + " already holds or awaits " + argv[1]);
    lock.waiters.emplace(rank, std::make_pair(c.id, tag));
    deferred = true;
    if (!lock.holder) grant_next(argv[1], lock);
    return {};
  }
  if (cmd == "UNLOCK") {
    need(3);
    const auto rank = rank_arg(argv[2]);
    auto it = locks_.find(argv[1]);
    if (it == locks_.end()) fail(ErrorCode::NotLockHolder, argv[1] + " is not held");
    auto& lock = it->second;
    if (lock.holder == rank) {
      lock.holder.reset();
      grant_next(argv[1], lock);
      return "OK";
    }
    // Withdrawing a queued request: the pending LOCK is answered first so the
    // client sees one reply per request.
    if (auto w = lock.waiters.find(rank); w != lock.waiters.end()) {
      reply(w->second.first, w->second.second, "ERR Cancelled withdrawn");
      lock.waiters.erase(w);
      return "OK";
    }
    fail(ErrorCode::NotLockHolder, "rank " + std::to_string(rank) + " does not hold " + argv[1]);
  }
  fail(ErrorCode::ProtocolError, "unknown command " + cmd);
}

void KvServer::grant_next(const std::string& name, LockState& lock) {
  (void)name;
  if (lock.holder || lock.waiters.empty()) return;
  auto first = lock.waiters.begin();
  lock.holder = first->first;
  lock.holder_client = first->second.first;
  const auto tag = first->second.second;
  lock.waiters.erase(first);
  reply(lock.holder_client, tag, "OK");
}

void KvServer::reply(std::uint64_t client_id, std::uint32_t tag, const std::string& text) {
  auto it = clients_.find(client_id);
  if (it == clients_.end()) return;
  it->second->channel.post(wire::Frame{wire::MsgType::KvReply, 0, tag, to_bytes(text)});
  it->second->channel.flush();
}

void KvServer::drop_client(Client& c) {
  for (auto& [name, lock] : locks_) {
    std::erase_if(lock.waiters, [&](const auto& w) { return w.second.first == c.id; });
    if (lock.holder && lock.holder_client == c.id) {
      lock.holder.reset();
      grant_next(name, lock);
    }
  }
}

KvClient::KvClient(net::Transport& transport, const Endpoint& server, Duration timeout)
    : transport_(transport),
      channel_(net::connect_with_retry(transport, server, transport.now() + timeout)),
      timeout_(timeout) {}

std::string KvClient::request(const std::string& command, Duration deadline) {
  const auto tag = next_tag_++;
  net::send_frame(transport_, channel_, wire::Frame{wire::MsgType::KvCmd, 0, tag, to_bytes(command)}, deadline);
  while (true) {
    auto f = net::recv_frame(transport_, channel_, deadline);
    if (f.type != wire::MsgType::KvReply)
      fail(ErrorCode::ProtocolError, "expected KV_REPLY, got message type " + std::to_string(int(f.type)));
    if (f.tag != tag) continue;  // late answer to an abandoned request
    auto text = to_string(f.payload);
    if (text.starts_with("ERR ")) raise_remote(text, "kv");
    return text;
  }
}

namespace {

std::string ok_value(const std::string& reply) {
  if (reply == "OK") return {};
  if (!reply.starts_with("OK ")) fail(ErrorCode::ProtocolError, "unexpected kv reply: " + reply);
  return reply.substr(3);
}

}  // namespace

std::int64_t KvClient::incr(const std::string& key) {
  auto v = parse_int<std::int64_t>(ok_value(request("INCR " + key, transport_.now() + timeout_)));
  if (!v) fail(ErrorCode::ProtocolError, "INCR reply is not an integer");
  return *v;
}

std::optional<Bytes> KvClient::get(const std::string& key) {
  auto r = request("GET " + key, transport_.now() + timeout_);
  if (r == "NIL") return std::nullopt;
  return base64_decode(ok_value(r));
}

void KvClient::set(const std::string& key, ByteView value) {
  ok_value(request("SET " + key + " " + base64_encode(value), transport_.now() + timeout_));
}

std::size_t KvClient::del(const std::string& prefix) {
  auto v = parse_int<std::size_t>(ok_value(request("DEL " + prefix, transport_.now() + timeout_)));
  if (!v) fail(ErrorCode::ProtocolError, "DEL reply is not a count");
  return *v;
}

void KvClient::lock(const std::string& name, std::uint32_t rank, Duration timeout) {
  const auto cmd = " " + name + " " + std::to_string(rank);
  try {
    ok_value(request("LOCK" + cmd, transport_.now() + timeout));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Timeout) throw;
    // Withdraw the queued request (or release if the grant raced the timeout).
    try {
      request("UNLOCK" + cmd, transport_.now() + timeout_);
    } catch (const Error&) {
    }
    throw;
  }
}

void KvClient::unlock(const std::string& name, std::uint32_t rank) {
  ok_value(request("UNLOCK " + name + " " + std::to_string(rank), transport_.now() + timeout_));
}

}  // namespace punchgrid::bootstrap
