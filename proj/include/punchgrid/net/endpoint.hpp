#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

namespace punchgrid::net {

/// IPv4 address in host byte order.
struct Ipv4 {
  std::uint32_t value = 0;

  static Ipv4 parse(std::string_view text);
  std::string str() const;

  friend auto operator<=>(const Ipv4&, const Ipv4&) = default;
};

/// host:port pair. Used both for real sockets and for natsim endpoints; the
/// rendezvous server's TranslationEntry stores one of these as the observed
/// external address of a worker.
struct Endpoint {
  Ipv4 host;
  std::uint16_t port = 0;

  static Endpoint parse(std::string_view text);  // "a.b.c.d:port"
  std::string str() const;

  friend auto operator<=>(const Endpoint&, const Endpoint&) = default;
};

using PeerAddress = Endpoint;

}  // namespace punchgrid::net

template <>
struct std::hash<punchgrid::net::Endpoint> {
  std::size_t operator()(const punchgrid::net::Endpoint& e) const noexcept {
    return std::hash<std::uint64_t>{}((std::uint64_t{e.host.value} << 16) | e.port);
  }
};
