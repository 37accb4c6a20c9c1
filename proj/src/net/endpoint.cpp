#include "punchgrid/net/endpoint.hpp"

#include <arpa/inet.h>

#include <charconv>

#include "punchgrid/error.hpp"

namespace punchgrid::net {

Ipv4 Ipv4::parse(std::string_view text) {
  if (text == "localhost") return Ipv4{0x7F000001};
  in_addr addr{};
  const std::string s(text);
  if (inet_pton(AF_INET, s.c_str(), &addr) != 1) fail(ErrorCode::InvalidArgument, "bad IPv4 address '" + s + "'");
  return Ipv4{ntohl(addr.s_addr)};
}

std::string Ipv4::str() const {
  return std::to_string(value >> 24) + "." + std::to_string((value >> 16) & 0xFF) + "." +
         std::to_string((value >> 8) & 0xFF) + "." + std::to_string(value & 0xFF);
}

Endpoint Endpoint::parse(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos) fail(ErrorCode::InvalidArgument, "endpoint '" + std::string(text) + "' lacks :port");
  unsigned port = 0;
  const auto ps = text.substr(colon + 1);
  auto [ptr, ec] = std::from_chars(ps.data(), ps.data() + ps.size(), port);
  if (ec != std::errc{} || ptr != ps.data() + ps.size() || port > 65535) {
    fail(ErrorCode::InvalidArgument, "bad port in '" + std::string(text) + "'");
  }
  return Endpoint{Ipv4::parse(text.substr(0, colon)), static_cast<std::uint16_t>(port)};
}

std::string Endpoint::str() const { return host.str() + ":" + std::to_string(port); }

}  // namespace punchgrid::net
