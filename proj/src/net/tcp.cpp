#include "punchgrid/net/tcp.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <thread>
#include <vector>

#include "punchgrid/error.hpp"

namespace punchgrid::net {

namespace detail {

class PollSource {
 public:
  virtual ~PollSource() = default;
  virtual int fd() const = 0;
  virtual short interest() const = 0;
};

struct PollRegistry {
  std::vector<PollSource*> sources;

  void add(PollSource* s) { sources.push_back(s); }
  void remove(PollSource* s) { std::erase(sources, s); }
};

}  // namespace detail

namespace {

std::string errno_text(int err) { return std::strerror(err); }

sockaddr_in to_sockaddr(const Endpoint& e) {
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_addr.s_addr = htonl(e.host.value);
  sa.sin_port = htons(e.port);
  return sa;
}

Endpoint from_sockaddr(const sockaddr_in& sa) {
  return Endpoint{Ipv4{ntohl(sa.sin_addr.s_addr)}, ntohs(sa.sin_port)};
}

Endpoint sock_name(int fd) {
  sockaddr_in sa{};
  socklen_t len = sizeof(sa);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&sa), &len);
  return from_sockaddr(sa);
}

int make_socket(bool reuse) {
  int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_NONBLOCK | SOCK_CLOEXEC, 0);
  if (fd < 0) fail(ErrorCode::Io, "socket(): " + errno_text(errno));
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (reuse) ::setsockopt(fd, SOL_SOCKET, SO_REUSEPORT, &one, sizeof(one));
  return fd;
}

class TcpStream final : public Stream, public detail::PollSource {
 public:
  TcpStream(std::shared_ptr<detail::PollRegistry> reg, int fd, Endpoint remote, StreamState initial)
      : registry_(std::move(reg)), fd_(fd), remote_(remote), state_(initial) {
    if (fd_ >= 0) {
      int one = 1;
      ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      local_ = sock_name(fd_);
    }
    registry_->add(this);
  }

  ~TcpStream() override {
    registry_->remove(this);
    if (fd_ >= 0) ::close(fd_);
  }

  StreamState state() override {
    if (state_ == StreamState::Connecting) {
      pollfd p{fd_, POLLOUT, 0};
      if (::poll(&p, 1, 0) > 0) {
        int err = 0;
        socklen_t len = sizeof(err);
        ::getsockopt(fd_, SOL_SOCKET, SO_ERROR, &err, &len);
        state_ = err == 0 ? StreamState::Open : StreamState::Failed;
        if (state_ == StreamState::Open) local_ = sock_name(fd_);
      }
    }
    return state_;
  }

  std::size_t write_some(ByteView data) override {
    if (state() != StreamState::Open || data.empty()) return 0;
    const auto n = ::send(fd_, data.data(), data.size(), MSG_NOSIGNAL | MSG_DONTWAIT);
    if (n < 0) {
      if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) {
        want_write_ = true;
        return 0;
      }
      state_ = StreamState::Failed;
      return 0;
    }
    want_write_ = static_cast<std::size_t>(n) < data.size();
    return static_cast<std::size_t>(n);
  }

  std::size_t read_some(std::span<std::uint8_t> out) override {
    if (state() != StreamState::Open || out.empty()) return 0;
    const auto n = ::recv(fd_, out.data(), out.size(), MSG_DONTWAIT);
    if (n == 0) {
      state_ = StreamState::Closed;
      return 0;
    }
    if (n < 0) {
      if (errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR) state_ = StreamState::Failed;
      return 0;
    }
    return static_cast<std::size_t>(n);
  }

  Endpoint local() const override { return local_; }
  Endpoint remote() const override { return remote_; }

  void shutdown_write() override {
    if (fd_ >= 0 && state() == StreamState::Open) ::shutdown(fd_, SHUT_WR);
  }

  void close() override {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
    if (state_ == StreamState::Open || state_ == StreamState::Connecting) state_ = StreamState::Closed;
  }

  int fd() const override { return fd_; }

  short interest() const override {
    if (fd_ < 0) return 0;
    switch (state_) {
      case StreamState::Connecting: return POLLOUT;
      case StreamState::Open: return static_cast<short>(POLLIN | (want_write_ ? POLLOUT : 0));
      default: return 0;
    }
  }

 private:
  std::shared_ptr<detail::PollRegistry> registry_;
  int fd_;
  Endpoint local_;
  Endpoint remote_;
  StreamState state_;
  bool want_write_ = false;
};

class TcpListener final : public Listener, public detail::PollSource {
 public:
  TcpListener(std::shared_ptr<detail::PollRegistry> reg, int fd)
      : registry_(std::move(reg)), fd_(fd), local_(sock_name(fd)) {
    registry_->add(this);
  }
  ~TcpListener() override {
    registry_->remove(this);
    ::close(fd_);
  }

  std::unique_ptr<Stream> try_accept() override {
    sockaddr_in sa{};
    socklen_t len = sizeof(sa);
    int fd = ::accept4(fd_, reinterpret_cast<sockaddr*>(&sa), &len, SOCK_NONBLOCK | SOCK_CLOEXEC);
    if (fd < 0) return nullptr;
    return std::make_unique<TcpStream>(registry_, fd, from_sockaddr(sa), StreamState::Open);
  }

  Endpoint local() const override { return local_; }
  int fd() const override { return fd_; }
  short interest() const override { return POLLIN; }

 private:
  std::shared_ptr<detail::PollRegistry> registry_;
  int fd_;
  Endpoint local_;
};

}  // namespace

TcpTransport::TcpTransport(Ipv4 bind_host)
    : bind_host_(bind_host), registry_(std::make_shared<detail::PollRegistry>()) {}

TcpTransport::~TcpTransport() = default;

std::unique_ptr<Listener> TcpTransport::listen(std::uint16_t port, bool shared_port) {
  int fd = make_socket(shared_port);
  auto sa = to_sockaddr(Endpoint{bind_host_, port});
  if (::bind(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0 || ::listen(fd, 256) != 0) {
    const int err = errno;
    ::close(fd);
    fail(ErrorCode::BindFailed, Endpoint{bind_host_, port}.str() + ": " + errno_text(err));
  }
  return std::make_unique<TcpListener>(registry_, fd);
}

std::unique_ptr<Stream> TcpTransport::connect(const Endpoint& remote, std::uint16_t local_port) {
  int fd = make_socket(local_port != 0);
  if (local_port != 0) {
    auto sa = to_sockaddr(Endpoint{bind_host_, local_port});
    if (::bind(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0) {
      const int err = errno;
      ::close(fd);
      fail(ErrorCode::AddressInUse, "bind local port " + std::to_string(local_port) + ": " + errno_text(err));
    }
  }
  auto sa = to_sockaddr(remote);
  const int rc = ::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa));
  StreamState initial = StreamState::Open;
  if (rc != 0) initial = errno == EINPROGRESS ? StreamState::Connecting : StreamState::Failed;
  return std::make_unique<TcpStream>(registry_, fd, remote, initial);
}

Duration TcpTransport::now() const {
  return std::chrono::duration_cast<Duration>(std::chrono::steady_clock::now().time_since_epoch());
}

void TcpTransport::wait_until(Duration deadline) {
  std::vector<pollfd> fds;
  fds.reserve(registry_->sources.size());
  for (auto* s : registry_->sources) {
    if (const short ev = s->interest(); ev != 0 && s->fd() >= 0) fds.push_back({s->fd(), ev, 0});
  }
  const auto remaining = deadline - now();
  if (remaining <= Duration::zero()) return;
  auto ms = std::chrono::ceil<std::chrono::milliseconds>(remaining).count();
  if (ms > 1000) ms = 1000;
  if (fds.empty()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(ms));
    return;
  }
  ::poll(fds.data(), fds.size(), static_cast<int>(ms));
}

void TcpTransport::sleep_until(Duration deadline) {
  const auto remaining = deadline - now();
  if (remaining > Duration::zero()) std::this_thread::sleep_for(remaining);
}

}  // namespace punchgrid::net
