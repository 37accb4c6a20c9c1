#include "doctest.h"
#include "punchgrid/error.hpp"
#include "punchgrid/natsim/network.hpp"
#include "punchgrid/net/frame_channel.hpp"

using namespace punchgrid;
using namespace punchgrid::natsim;
using namespace std::chrono_literals;

namespace {

Packet udp_like(const HostStack& from, std::uint16_t port, const Endpoint& dst) {
  return Packet{from.id(), Endpoint{from.ip(), port}, dst, SegmentKind::Data, 0, {}};
}

const Ipv4 kPublicA = Ipv4::parse("198.51.100.1");
const Ipv4 kPublicB = Ipv4::parse("198.51.100.2");
const Ipv4 kServer = Ipv4::parse("203.0.113.5");
const Ipv4 kInternal = Ipv4::parse("10.0.0.2");

}  // namespace

TEST_CASE("full cone admits any remote once mapped") {
  VirtualNetwork net;
  auto& gw = net.add_gateway(NatPolicy::FullCone, kPublicA, 30s);
  auto host = net.attach(gw, kInternal);
  auto server = net.add_public_host(kServer);
  auto other = net.add_public_host(kPublicB);
  (void)host;
  (void)server;
  (void)other;

  const Endpoint internal{kInternal, 5000};
  CHECK(net.deliver(udp_like(*host, 5000, {kServer, 80})) == DeliveryResult::Delivered);
  const auto ext = gw.external_for(internal, {kServer, 80});
  REQUIRE(ext);
  CHECK(ext->host == kPublicA);
  CHECK(net.deliver(udp_like(*other, 9, *ext)) == DeliveryResult::Delivered);
  CHECK(net.trace().back().final_dst == internal);
}

TEST_CASE("address restricted admits only contacted hosts") {
  VirtualNetwork net;
  auto& gw = net.add_gateway(NatPolicy::AddressRestricted, kPublicA, 30s);
  auto host = net.attach(gw, kInternal);
  auto server = net.add_public_host(kServer);
  auto other = net.add_public_host(kPublicB);
  (void)host, (void)server, (void)other;

  const Endpoint internal{kInternal, 5000};
  net.deliver(udp_like(*host, 5000, {kServer, 80}));
  const auto ext = *gw.external_for(internal, {kServer, 80});
  CHECK(net.deliver(udp_like(*other, 9, ext)) == DeliveryResult::Dropped);
  // Any port on a contacted host is fine.
  CHECK(net.deliver(udp_like(*server, 81, ext)) == DeliveryResult::Delivered);
  // Endpoint-independent mapping: same external port toward a new host.
  net.deliver(udp_like(*host, 5000, {kPublicB, 9}));
  CHECK(*gw.external_for(internal, {kPublicB, 9}) == ext);
  CHECK(net.deliver(udp_like(*other, 9, ext)) == DeliveryResult::Delivered);
}

TEST_CASE("symmetric NAT maps per destination and filters strictly") {
  VirtualNetwork net;
  auto& gw = net.add_gateway(NatPolicy::Symmetric, kPublicA, 30s);
  auto host = net.attach(gw, kInternal);
  auto server = net.add_public_host(kServer);
  auto other = net.add_public_host(kPublicB);
  (void)host, (void)server, (void)other;

  const Endpoint internal{kInternal, 5000};
  net.deliver(udp_like(*host, 5000, {kServer, 80}));
  net.deliver(udp_like(*host, 5000, {kPublicB, 9}));
  const auto to_server = *gw.external_for(internal, {kServer, 80});
  const auto to_other = *gw.external_for(internal, {kPublicB, 9});
  CHECK(to_server.port != to_other.port);
  // The port observed by the server is useless to anyone else.
  CHECK(net.deliver(udp_like(*other, 9, to_server)) == DeliveryResult::Dropped);
  CHECK(net.deliver(udp_like(*server, 81, to_server)) == DeliveryResult::Dropped);
  CHECK(net.deliver(udp_like(*server, 80, to_server)) == DeliveryResult::Delivered);
}

TEST_CASE("idle mappings expire after the ttl") {
  VirtualNetwork net;
  auto& gw = net.add_gateway(NatPolicy::FullCone, kPublicA, 30s);
  auto host = net.attach(gw, kInternal);
  auto server = net.add_public_host(kServer);
  (void)host, (void)server;

  const Endpoint internal{kInternal, 5000};
  net.deliver(udp_like(*host, 5000, {kServer, 80}));
  const auto ext = *gw.external_for(internal, {kServer, 80});
  CHECK(net.advance_time(29s) == 0);
  // Inbound traffic keeps it alive.
  CHECK(net.deliver(udp_like(*server, 80, ext)) == DeliveryResult::Delivered);
  CHECK(net.advance_time(29s) == 0);
  CHECK(net.advance_time(2s) == 1);
  CHECK(gw.mappings().empty());
  CHECK(net.deliver(udp_like(*server, 80, ext)) == DeliveryResult::Dropped);
  CHECK(net.stats().expired_mappings == 1);
}

TEST_CASE("attaching the same internal address twice fails") {
  VirtualNetwork net;
  auto& gw = net.add_gateway(NatPolicy::FullCone, kPublicA, 30s);
  net.attach(gw, kInternal);
  CHECK_THROWS_AS(net.attach(gw, kInternal), Error);
}

TEST_CASE("tasks exchange frames over simulated tcp through NAT") {
  VirtualNetwork net;
  auto& gw = net.add_gateway(NatPolicy::AddressRestricted, kPublicA, 30s);
  auto client = net.attach(gw, kInternal);
  auto server = net.add_public_host(kServer);

  std::string got;
  Endpoint observed;
  net.spawn("server", [&] {
    auto l = server->listen(7000);
    std::unique_ptr<net::Stream> s;
    while (!(s = l->try_accept())) server->wait_until(server->now() + 1s);
    observed = s->remote();
    net::FrameChannel ch(std::move(s));
    auto f = net::recv_frame(*server, ch, server->now() + 10s);
    got = to_string(f.payload);
    net::send_frame(*server, ch, wire::Frame{wire::MsgType::Data, 0, 1, to_bytes("pong")}, server->now() + 10s);
  });
  std::string reply;
  net.spawn("client", [&] {
    net::FrameChannel ch(net::connect_blocking(*client, {kServer, 7000}, client->now() + 10s));
    net::send_frame(*client, ch, wire::Frame{wire::MsgType::Data, 0, 1, to_bytes("ping")}, client->now() + 10s);
    reply = to_string(net::recv_frame(*client, ch, client->now() + 10s).payload);
  });
  net.run();
  CHECK(got == "ping");
  CHECK(reply == "pong");
  CHECK(observed.host == kPublicA);
  CHECK(observed.port >= 20000);
}

TEST_CASE("large payloads are segmented and reassembled") {
  VirtualNetwork net;
  auto a = net.add_public_host(kPublicA);
  auto b = net.add_public_host(kPublicB);
  Bytes big(1 << 20);
  for (std::size_t i = 0; i < big.size(); ++i) big[i] = std::uint8_t(i * 31);
  Bytes received;
  net.spawn("b", [&] {
    auto l = b->listen(1);
    std::unique_ptr<net::Stream> s;
    while (!(s = l->try_accept())) b->wait_until(b->now() + 1s);
    net::FrameChannel ch(std::move(s));
    received = net::recv_frame(*b, ch, b->now() + 60s).payload;
  });
  net.spawn("a", [&] {
    net::FrameChannel ch(net::connect_blocking(*a, {kPublicB, 1}, a->now() + 10s));
    net::send_frame(*a, ch, wire::Frame{wire::MsgType::Data, 0, 0, big}, a->now() + 60s);
    a->sleep_for(1s);
  });
  net.run();
  CHECK(received == big);
}

TEST_CASE("virtual runs are deterministic") {
  auto run_once = [] {
    VirtualNetwork net;
    auto& gw = net.add_gateway(NatPolicy::FullCone, kPublicA, 30s);
    auto c = net.attach(gw, kInternal);
    auto s = net.add_public_host(kServer);
    net.spawn("s", [&] {
      auto l = s->listen(7);
      for (int i = 0; i < 3; ++i) {
        std::unique_ptr<net::Stream> st;
        while (!(st = l->try_accept())) s->wait_until(s->now() + 1s);
        net::FrameChannel ch(std::move(st));
        auto f = net::recv_frame(*s, ch, s->now() + 5s);
        net::send_frame(*s, ch, f, s->now() + 5s);
        s->sleep_for(10ms);
      }
    });
    net.spawn("c", [&] {
      for (int i = 0; i < 3; ++i) {
        net::FrameChannel ch(net::connect_blocking(*c, {kServer, 7}, c->now() + 5s));
        net::send_frame(*c, ch, wire::Frame{wire::MsgType::Data, 0, std::uint32_t(i), Bytes(100, 1)}, c->now() + 5s);
        net::recv_frame(*c, ch, c->now() + 5s);
      }
    });
    net.run();
    return std::make_pair(net.trace(), net.now());
  };
  const auto first = run_once();
  const auto second = run_once();
  CHECK(first.first.size() > 10);
  CHECK(first == second);
}

TEST_CASE("unacknowledged data aborts the connection once the mapping is gone") {
  NetworkConfig cfg;
  cfg.abort_timeout = 1s;
  VirtualNetwork net(cfg);
  auto& gw = net.add_gateway(NatPolicy::AddressRestricted, kPublicA, 5s);
  auto c = net.attach(gw, kInternal);
  auto s = net.add_public_host(kServer);
  ErrorCode server_error{};
  net.spawn("s", [&] {
    auto l = s->listen(7);
    std::unique_ptr<net::Stream> st;
    while (!(st = l->try_accept())) s->wait_until(s->now() + 1s);
    net::FrameChannel ch(std::move(st));
    net::recv_frame(*s, ch, s->now() + 5s);
    s->sleep_for(20s);  // client's mapping expires meanwhile
    try {
      net::send_frame(*s, ch, wire::Frame{wire::MsgType::Data, 0, 0, to_bytes("late")}, s->now() + 5s);
      net::recv_frame(*s, ch, s->now() + 5s);
    } catch (const Error& e) {
      server_error = e.code();
    }
  });
  net.spawn("c", [&] {
    net::FrameChannel ch(net::connect_blocking(*c, {kServer, 7}, c->now() + 5s));
    net::send_frame(*c, ch, wire::Frame{wire::MsgType::Data, 0, 0, to_bytes("hello")}, c->now() + 5s);
    try {
      net::recv_frame(*c, ch, c->now() + 40s);
    } catch (const Error&) {
    }
  });
  net.run();
  CHECK(server_error == ErrorCode::PeerClosed);
  CHECK(net.stats().expired_mappings >= 1);
}
