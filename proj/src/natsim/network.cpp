#include "punchgrid/natsim/network.hpp"

#include <algorithm>
#include <deque>
#include <semaphore>
#include <thread>

#include "punchgrid/error.hpp"

namespace punchgrid::natsim {

std::string_view to_string(NatPolicy p) {
  switch (p) {
    case NatPolicy::FullCone: return "FullCone";
    case NatPolicy::AddressRestricted: return "AddressRestricted";
    case NatPolicy::Symmetric: return "Symmetric";
  }
  return "?";
}

NatPolicy parse_policy(std::string_view text) {
  if (text == "FullCone" || text == "full-cone" || text == "fullcone") return NatPolicy::FullCone;
  if (text == "AddressRestricted" || text == "address-restricted" || text == "restricted")
    return NatPolicy::AddressRestricted;
  if (text == "Symmetric" || text == "symmetric") return NatPolicy::Symmetric;
  fail(ErrorCode::InvalidArgument, "unknown NAT policy '" + std::string(text) + "'");
}

std::string_view to_string(SegmentKind k) {
  switch (k) {
    case SegmentKind::Syn: return "SYN";
    case SegmentKind::SynAck: return "SYNACK";
    case SegmentKind::Data: return "DATA";
    case SegmentKind::Ack: return "ACK";
    case SegmentKind::Fin: return "FIN";
    case SegmentKind::Rst: return "RST";
  }
  return "?";
}

// --- NatGateway -------------------------------------------------------------

std::vector<MappingView> NatGateway::mappings() const {
  std::vector<MappingView> out;
  for (const auto& [port, m] : by_port_) {
    out.push_back({m.internal, Endpoint{external_, port}, m.remote, m.last_activity});
  }
  return out;
}

std::optional<Endpoint> NatGateway::external_for(const Endpoint& internal, const Endpoint& remote) const {
  for (const auto& [port, m] : by_port_) {
    if (m.internal != internal) continue;
    if (policy_ == NatPolicy::Symmetric && m.remote != remote) continue;
    return Endpoint{external_, port};
  }
  return std::nullopt;
}

Endpoint NatGateway::outbound(const Endpoint& internal, const Endpoint& remote, Duration now) {
  Mapping* found = nullptr;
  for (auto& [port, m] : by_port_) {
    if (m.internal == internal && (policy_ != NatPolicy::Symmetric || m.remote == remote)) {
      found = &m;
      break;
    }
  }
  if (found == nullptr) {
    while (by_port_.contains(next_port_)) ++next_port_;
    const auto port = next_port_++;
    Mapping m;
    m.internal = internal;
    m.external_port = port;
    if (policy_ == NatPolicy::Symmetric) m.remote = remote;
    found = &by_port_.emplace(port, std::move(m)).first->second;
  }
  found->contacted.insert(remote.host);
  found->last_activity = now;
  return Endpoint{external_, found->external_port};
}

std::optional<Endpoint> NatGateway::inbound(const Endpoint& src, std::uint16_t external_port, Duration now) {
  auto it = by_port_.find(external_port);
  if (it == by_port_.end()) return std::nullopt;
  Mapping& m = it->second;
  bool admit = false;
  switch (policy_) {
    case NatPolicy::FullCone: admit = true; break;
    case NatPolicy::AddressRestricted: admit = m.contacted.contains(src.host); break;
    case NatPolicy::Symmetric: admit = m.remote == src; break;
  }
  if (!admit) return std::nullopt;
  m.last_activity = now;
  return m.internal;
}

std::size_t NatGateway::expire(Duration now) {
  if (ttl_ <= Duration::zero()) return 0;
  return std::erase_if(by_port_, [&](const auto& kv) { return now - kv.second.last_activity >= ttl_; });
}

// --- Tasks ------------------------------------------------------------------

namespace {

// Thrown inside a task to unwind it when the scheduler cancels it. Not derived
// from std::exception so ordinary error handlers in task bodies let it pass.
struct TaskCancelled {};

}  // namespace

struct VirtualNetwork::Task {
  enum class State { New, Runnable, Blocked, Done };

  std::size_t id = 0;
  std::string name;
  std::function<void()> body;
  bool daemon = false;
  State state = State::New;
  HostStack* waiting_host = nullptr;
  Duration deadline{};
  bool cancelled = false;
  std::optional<ErrorCode> abort_with;
  std::exception_ptr error;
  Duration finished_at{};
  std::binary_semaphore resume{0};
  std::thread thread;
};

namespace {
thread_local VirtualNetwork::Task* tl_task = nullptr;
thread_local VirtualNetwork* tl_net = nullptr;
constexpr Duration kNever = Duration::max();
}  // namespace

// --- VirtualNetwork ---------------------------------------------------------

VirtualNetwork::VirtualNetwork(NetworkConfig config) : config_(config) {}

VirtualNetwork::~VirtualNetwork() {
  for (auto& t : tasks_) {
    if (t->thread.joinable()) {
      if (t->state != Task::State::Done) {
        t->cancelled = true;
        switch_to(*t);
      }
      t->thread.join();
    }
  }
}

NatGateway& VirtualNetwork::add_gateway(NatPolicy policy, Ipv4 external_host, Duration mapping_ttl) {
  for (const auto& g : gateways_) {
    if (g->external_host() == external_host) fail(ErrorCode::AddressInUse, "gateway " + external_host.str());
  }
  if (public_hosts_.contains(external_host)) fail(ErrorCode::AddressInUse, "public host " + external_host.str());
  gateways_.push_back(std::unique_ptr<NatGateway>(new NatGateway(policy, external_host, mapping_ttl)));
  return *gateways_.back();
}

std::shared_ptr<HostStack> VirtualNetwork::add_public_host(Ipv4 ip) {
  if (public_hosts_.contains(ip)) fail(ErrorCode::AddressInUse, "public host " + ip.str());
  for (const auto& g : gateways_) {
    if (g->external_host() == ip) fail(ErrorCode::AddressInUse, "gateway " + ip.str());
  }
  auto host = std::make_shared<HostStack>(*this, static_cast<std::uint32_t>(hosts_.size()), ip, nullptr);
  hosts_.push_back(host);
  public_hosts_[ip] = host.get();
  return host;
}

std::shared_ptr<HostStack> VirtualNetwork::attach(NatGateway& gateway, Ipv4 internal) {
  const auto key = std::make_pair(static_cast<const NatGateway*>(&gateway), internal);
  if (internal_hosts_.contains(key)) {
    fail(ErrorCode::AddressInUse, internal.str() + " already attached behind " + gateway.external_host().str());
  }
  auto host = std::make_shared<HostStack>(*this, static_cast<std::uint32_t>(hosts_.size()), internal, &gateway);
  hosts_.push_back(host);
  internal_hosts_[key] = host.get();
  return host;
}

void VirtualNetwork::sweep_mappings() {
  for (auto& g : gateways_) stats_.expired_mappings += g->expire(now_);
}

DeliveryResult VirtualNetwork::deliver(Packet p) {
  ++stats_.sent;
  sweep_mappings();
  TraceEvent ev;
  ev.time = now_;
  ev.kind = p.kind;
  ev.sent_src = p.src;

  if (p.origin_host < hosts_.size()) {
    if (NatGateway* gw = hosts_[p.origin_host]->gateway()) p.src = gw->outbound(p.src, p.dst, now_);
  }
  ev.wire_src = p.src;
  ev.wire_dst = p.dst;

  HostStack* target = nullptr;
  if (auto it = public_hosts_.find(p.dst.host); it != public_hosts_.end()) {
    target = it->second;
  } else {
    for (auto& g : gateways_) {
      if (g->external_host() != p.dst.host) continue;
      if (auto internal = g->inbound(p.src, p.dst.port, now_)) {
        p.dst = *internal;
        auto hit = internal_hosts_.find({g.get(), internal->host});
        if (hit != internal_hosts_.end()) target = hit->second;
      } else {
        ev.note = "filtered by " + std::string(to_string(g->policy())) + " gateway";
      }
      break;
    }
    if (target == nullptr && ev.note.empty()) ev.note = "no route";
  }
  ev.final_dst = p.dst;

  const auto result = target != nullptr ? DeliveryResult::Delivered : DeliveryResult::Dropped;
  ev.result = result;
  if (result == DeliveryResult::Delivered) {
    ++stats_.delivered;
  } else {
    ++stats_.dropped;
  }
  if (config_.record_trace) trace_.push_back(std::move(ev));
  if (target != nullptr) target->on_packet(p);
  return result;
}

void VirtualNetwork::transmit(Packet p) {
  // Counted as sent on arrival at the wire (inside deliver).
  schedule_timer(now_ + config_.link_latency, [this, p = std::move(p)]() mutable { deliver(std::move(p)); });
}

void VirtualNetwork::schedule_timer(Duration at, std::function<void()> fn) {
  events_.push(Event{at, event_order_++, std::move(fn)});
}

bool VirtualNetwork::process_one_event_until(Duration limit) {
  if (events_.empty() || events_.top().time > limit) return false;
  // priority_queue::top is const; the callable is moved out via const_cast
  // before pop, which is safe because the element is discarded immediately.
  auto& top = const_cast<Event&>(events_.top());
  now_ = std::max(now_, top.time);
  auto fn = std::move(top.fn);
  events_.pop();
  fn();
  return true;
}

std::size_t VirtualNetwork::advance_time(Duration dt) {
  if (dt < Duration::zero()) fail(ErrorCode::InvalidArgument, "advance_time with negative dt");
  const auto before = stats_.expired_mappings;
  const auto target = now_ + dt;
  while (process_one_event_until(target)) {
  }
  now_ = target;
  sweep_mappings();
  return static_cast<std::size_t>(stats_.expired_mappings - before);
}

std::size_t VirtualNetwork::spawn(std::string name, std::function<void()> body, bool daemon) {
  auto t = std::make_unique<Task>();
  t->id = tasks_.size();
  t->name = std::move(name);
  t->body = std::move(body);
  t->daemon = daemon;
  tasks_.push_back(std::move(t));
  return tasks_.size() - 1;
}

bool VirtualNetwork::in_task() const { return tl_net == this && tl_task != nullptr; }

void VirtualNetwork::switch_to(Task& t) {
  t.resume.release();
  sched_sem_.acquire();
}

void VirtualNetwork::block_current(HostStack* host, Duration deadline) {
  Task* t = tl_task;
  if (t == nullptr || tl_net != this) fail(ErrorCode::InvalidArgument, "block_current outside a task");
  t->state = Task::State::Blocked;
  t->waiting_host = host;
  t->deadline = deadline;
  sched_sem_.release();
  t->resume.acquire();
  if (t->cancelled) throw TaskCancelled{};
  if (t->abort_with) {
    const auto code = *t->abort_with;
    t->abort_with.reset();
    fail(code, "task '" + t->name + "' aborted by scheduler");
  }
}

void VirtualNetwork::wake_host(HostStack& host) {
  for (auto& t : tasks_) {
    if (t->state == Task::State::Blocked && t->waiting_host == &host) t->state = Task::State::Runnable;
  }
}

void VirtualNetwork::run() {
  for (auto& tp : tasks_) {
    Task& t = *tp;
    if (t.state != Task::State::New) continue;
    t.state = Task::State::Runnable;
    t.thread = std::thread([this, &t] {
      t.resume.acquire();
      tl_task = &t;
      tl_net = this;
      if (!t.cancelled) {
        try {
          t.body();
        } catch (const TaskCancelled&) {
        } catch (...) {
          t.error = std::current_exception();
        }
      }
      t.state = Task::State::Done;
      t.finished_at = now_;
      sched_sem_.release();
    });
  }

  auto live_workers = [&] {
    return std::any_of(tasks_.begin(), tasks_.end(),
                       [](const auto& t) { return !t->daemon && t->state != Task::State::Done; });
  };

  while (true) {
    for (bool ran = true; ran;) {
      ran = false;
      for (auto& t : tasks_) {
        if (t->state == Task::State::Runnable) {
          switch_to(*t);
          ran = true;
          break;
        }
      }
    }
    if (!live_workers()) break;

    Duration next = events_.empty() ? kNever : events_.top().time;
    for (auto& t : tasks_) {
      if (t->state == Task::State::Blocked) next = std::min(next, t->deadline);
    }
    if (next == kNever || next > config_.time_limit) {
      const auto code = next == kNever ? ErrorCode::Deadlock : ErrorCode::Timeout;
      for (auto& t : tasks_) {
        if (!t->daemon && t->state == Task::State::Blocked) {
          t->abort_with = code;
          t->state = Task::State::Runnable;
        }
      }
      continue;
    }

    now_ = std::max(now_, next);
    while (process_one_event_until(now_)) {
    }
    sweep_mappings();
    for (auto& t : tasks_) {
      if (t->state == Task::State::Blocked && t->deadline <= now_) t->state = Task::State::Runnable;
    }
  }

  for (auto& t : tasks_) {
    if (t->state != Task::State::Done) {
      t->cancelled = true;
      switch_to(*t);
    }
  }
  for (auto& t : tasks_) {
    if (t->thread.joinable()) t->thread.join();
  }
}

std::exception_ptr VirtualNetwork::task_error(std::size_t id) const { return tasks_.at(id)->error; }

Duration VirtualNetwork::task_finish_time(std::size_t id) const { return tasks_.at(id)->finished_at; }

// --- HostStack ----------------------------------------------------------------

struct HostStack::Conn {
  Endpoint local;
  Endpoint remote;
  net::StreamState state = net::StreamState::Connecting;
  Bytes rx;
  std::size_t rx_head = 0;
  bool peer_fin = false;
  bool fin_sent = false;
  bool detached = false;
  std::uint64_t next_seq = 1;
  std::uint64_t acked = 0;
};

struct HostStack::ListenState {
  std::uint16_t port = 0;
  std::deque<std::shared_ptr<Conn>> backlog;
};

namespace {

class SimStream final : public net::Stream {
 public:
  SimStream(std::shared_ptr<HostStack> host, std::shared_ptr<HostStack::Conn> conn)
      : host_(std::move(host)), conn_(std::move(conn)) {}
  ~SimStream() override { close(); }

  net::StreamState state() override;
  std::size_t write_some(ByteView data) override {
    if (state() != net::StreamState::Open || conn_->fin_sent) return 0;
    return host_->stream_write(conn_, data);
  }
  void shutdown_write() override {
    if (!closed_) host_->stream_shutdown(conn_);
  }
  std::size_t read_some(std::span<std::uint8_t> out) override;
  Endpoint local() const override;
  Endpoint remote() const override;
  void close() override {
    if (!closed_) {
      closed_ = true;
      host_->stream_close(conn_);
    }
  }

 private:
  std::shared_ptr<HostStack> host_;
  std::shared_ptr<HostStack::Conn> conn_;
  bool closed_ = false;
};

class SimListener final : public net::Listener {
 public:
  SimListener(std::shared_ptr<HostStack> host, Endpoint local) : host_(std::move(host)), local_(local) {}
  ~SimListener() override { host_->listener_close(local_.port); }

  std::unique_ptr<net::Stream> try_accept() override {
    auto c = host_->listener_accept(local_.port);
    if (!c) return nullptr;
    return std::make_unique<SimStream>(host_, std::move(c));
  }
  Endpoint local() const override { return local_; }

 private:
  std::shared_ptr<HostStack> host_;
  Endpoint local_;
};

}  // namespace

// SimStream members that need the complete Conn type.
net::StreamState SimStream::state() {
  if (closed_) return net::StreamState::Closed;
  if (conn_->state == net::StreamState::Open && conn_->peer_fin && conn_->rx_head == conn_->rx.size()) {
    return net::StreamState::Closed;
  }
  return conn_->state;
}

std::size_t SimStream::read_some(std::span<std::uint8_t> out) {
  if (closed_) return 0;
  const std::size_t avail = conn_->rx.size() - conn_->rx_head;
  const std::size_t n = std::min(avail, out.size());
  std::copy_n(conn_->rx.begin() + static_cast<std::ptrdiff_t>(conn_->rx_head), n, out.begin());
  conn_->rx_head += n;
  if (conn_->rx_head == conn_->rx.size()) {
    conn_->rx.clear();
    conn_->rx_head = 0;
  }
  return n;
}

Endpoint SimStream::local() const { return conn_->local; }
Endpoint SimStream::remote() const { return conn_->remote; }

HostStack::HostStack(VirtualNetwork& net, std::uint32_t id, Ipv4 ip, NatGateway* gateway)
    : net_(net), id_(id), ip_(ip), gateway_(gateway) {}

HostStack::~HostStack() = default;

std::uint16_t HostStack::ephemeral_port() {
  while (true) {
    const auto port = next_ephemeral_++;
    if (next_ephemeral_ == 0) next_ephemeral_ = 40000;
    if (listeners_.contains(port)) continue;
    const bool used = std::any_of(conns_.begin(), conns_.end(), [&](const auto& kv) { return kv.first.first == port; });
    if (!used) return port;
  }
}

std::unique_ptr<net::Listener> HostStack::listen(std::uint16_t port, bool /*shared_port*/) {
  if (port == 0) port = ephemeral_port();
  if (listeners_.contains(port)) fail(ErrorCode::BindFailed, Endpoint{ip_, port}.str() + " already listening");
  auto ls = std::make_shared<ListenState>();
  ls->port = port;
  listeners_[port] = ls;
  return std::make_unique<SimListener>(shared_from_this(), Endpoint{ip_, port});
}

std::unique_ptr<net::Stream> HostStack::connect(const Endpoint& remote, std::uint16_t local_port) {
  if (local_port == 0) local_port = ephemeral_port();
  auto c = std::make_shared<Conn>();
  c->local = Endpoint{ip_, local_port};
  c->remote = remote;
  const auto key = std::make_pair(local_port, remote);
  if (conns_.contains(key)) {
    // Four-tuple already in use: behaves like EADDRNOTAVAIL.
    c->state = net::StreamState::Failed;
    c->detached = true;
  } else {
    conns_[key] = c;
    send(c->local, remote, SegmentKind::Syn);
  }
  return std::make_unique<SimStream>(shared_from_this(), c);
}

void HostStack::wait_until(Duration deadline) {
  if (activity_) {
    activity_ = false;
    return;
  }
  if (deadline <= now()) return;
  if (net_.in_task()) {
    net_.block_current(this, deadline);
  } else {
    // Driven from outside the scheduler (unit tests): pump events directly.
    while (!activity_ && net_.process_one_event_until(deadline)) {
    }
    if (!activity_) net_.now_ = std::max(net_.now_, deadline);
  }
  activity_ = false;
}

void HostStack::sleep_until(Duration deadline) {
  if (deadline <= now()) return;
  if (net_.in_task()) {
    net_.block_current(nullptr, deadline);
  } else {
    net_.advance_time(deadline - now());
  }
}

void HostStack::send(const Endpoint& from, const Endpoint& to, SegmentKind kind, Bytes payload, std::uint64_t seq) {
  Packet p;
  p.origin_host = id_;
  p.src = from;
  p.dst = to;
  p.kind = kind;
  p.seq = seq;
  p.payload = std::move(payload);
  net_.transmit(std::move(p));
}

void HostStack::arm_ack_timer(const std::shared_ptr<Conn>& c, std::uint64_t seq) {
  std::weak_ptr<Conn> weak = c;
  std::weak_ptr<HostStack> self = weak_from_this();
  net_.schedule_timer(net_.now() + net_.config().abort_timeout, [weak, self, seq] {
    auto conn = weak.lock();
    auto host = self.lock();
    if (!conn || !host || conn->acked >= seq || conn->state != net::StreamState::Open) return;
    conn->state = net::StreamState::Failed;
    if (!conn->detached) {
      host->conns_.erase({conn->local.port, conn->remote});
      conn->detached = true;
    }
    host->activity_ = true;
    host->net_.wake_host(*host);
  });
}

std::size_t HostStack::stream_write(const std::shared_ptr<Conn>& c, ByteView data) {
  const std::size_t seg = net_.config().max_segment;
  for (std::size_t off = 0; off < data.size(); off += seg) {
    const auto n = std::min(seg, data.size() - off);
    const auto seq = c->next_seq++;
    send(c->local, c->remote, SegmentKind::Data, Bytes(data.begin() + off, data.begin() + off + n), seq);
    arm_ack_timer(c, seq);
  }
  return data.size();
}

void HostStack::stream_shutdown(const std::shared_ptr<Conn>& c) {
  if (c->detached || c->fin_sent || c->state != net::StreamState::Open) return;
  c->fin_sent = true;
  send(c->local, c->remote, SegmentKind::Fin);
}

void HostStack::stream_close(const std::shared_ptr<Conn>& c) {
  if (c->detached) return;
  stream_shutdown(c);
  conns_.erase({c->local.port, c->remote});
  c->detached = true;
  if (c->state != net::StreamState::Failed) c->state = net::StreamState::Closed;
}

void HostStack::listener_close(std::uint16_t port) {
  auto it = listeners_.find(port);
  if (it == listeners_.end()) return;
  for (auto& c : it->second->backlog) {
    if (!c->detached) {
      send(c->local, c->remote, SegmentKind::Rst);
      conns_.erase({c->local.port, c->remote});
      c->detached = true;
    }
  }
  listeners_.erase(it);
}

std::shared_ptr<HostStack::Conn> HostStack::listener_accept(std::uint16_t port) {
  auto it = listeners_.find(port);
  if (it == listeners_.end() || it->second->backlog.empty()) return nullptr;
  auto c = it->second->backlog.front();
  it->second->backlog.pop_front();
  return c;
}

void HostStack::on_packet(const Packet& p) {
  const auto key = std::make_pair(p.dst.port, p.src);
  auto it = conns_.find(key);
  std::shared_ptr<Conn> conn = it == conns_.end() ? nullptr : it->second;

  switch (p.kind) {
    case SegmentKind::Syn:
      if (conn) {
        // Simultaneous open, or a duplicate SYN for an open connection.
        conn->state = net::StreamState::Open;
        send(p.dst, p.src, SegmentKind::SynAck);
      } else if (auto lit = listeners_.find(p.dst.port); lit != listeners_.end()) {
        auto c = std::make_shared<Conn>();
        c->local = p.dst;
        c->remote = p.src;
        c->state = net::StreamState::Open;
        conns_[key] = c;
        lit->second->backlog.push_back(c);
        send(p.dst, p.src, SegmentKind::SynAck);
      } else {
        send(p.dst, p.src, SegmentKind::Rst);
      }
      break;
    case SegmentKind::SynAck:
      if (!conn) {
        send(p.dst, p.src, SegmentKind::Rst);
      } else if (conn->state == net::StreamState::Connecting) {
        conn->state = net::StreamState::Open;
      }
      break;
    case SegmentKind::Data:
      if (conn && conn->state == net::StreamState::Open) {
        conn->rx.insert(conn->rx.end(), p.payload.begin(), p.payload.end());
        send(p.dst, p.src, SegmentKind::Ack, {}, p.seq);
      } else {
        send(p.dst, p.src, SegmentKind::Rst);
      }
      break;
    case SegmentKind::Ack:
      if (conn) conn->acked = std::max(conn->acked, p.seq);
      break;
    case SegmentKind::Fin:
      if (conn) conn->peer_fin = true;
      break;
    case SegmentKind::Rst:
      if (conn) {
        conn->state = net::StreamState::Failed;
        conns_.erase(key);
        conn->detached = true;
      }
      break;
  }
  activity_ = true;
  net_.wake_host(*this);
}

}  // namespace punchgrid::natsim
