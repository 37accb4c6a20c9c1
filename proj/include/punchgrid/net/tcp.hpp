#pragma once

#include <memory>

#include "punchgrid/net/transport.hpp"

namespace punchgrid::net {

namespace detail {
struct PollRegistry;
}

/// Transport over kernel TCP sockets (IPv4). Every socket is non-blocking and
/// bound with SO_REUSEADDR|SO_REUSEPORT so a listener and outbound connects
/// can share one local port.
class TcpTransport final : public Transport {
 public:
  explicit TcpTransport(Ipv4 bind_host = Ipv4{});
  ~TcpTransport() override;

  std::unique_ptr<Listener> listen(std::uint16_t port, bool shared_port = false) override;
  std::unique_ptr<Stream> connect(const Endpoint& remote, std::uint16_t local_port) override;
  Duration now() const override;
  void wait_until(Duration deadline) override;
  void sleep_until(Duration deadline) override;

 private:
  Ipv4 bind_host_;
  std::shared_ptr<detail::PollRegistry> registry_;
};

}  // namespace punchgrid::net
