#include <thread>

#include "doctest.h"
#include "punchgrid/error.hpp"
#include "punchgrid/natsim/network.hpp"
#include "punchgrid/net/tcp.hpp"
#include "punchgrid/rendezvous/rendezvous.hpp"

using namespace punchgrid;
using namespace punchgrid::natsim;
using namespace punchgrid::rendezvous;
using namespace std::chrono_literals;

namespace {

const Ipv4 kRdvHost = Ipv4::parse("203.0.113.20");
const JobId kJob("punch");

struct PunchOutcome {
  std::optional<ErrorCode> error;
  std::string received;
  PeerAddress registered;
  Endpoint internal;
  std::size_t connections_after = 0;
};

struct TwoSites {
  VirtualNetwork net;
  std::shared_ptr<HostStack> rdv_host = net.add_public_host(kRdvHost);
  std::unique_ptr<RendezvousServer> server;
  NatGateway* gw[2];
  std::shared_ptr<HostStack> host[2];
  PunchOutcome out[2];

  TwoSites(NatPolicy a, NatPolicy b, Duration ttl = 30s) {
    gw[0] = &net.add_gateway(a, Ipv4::parse("198.51.100.1"), ttl);
    gw[1] = &net.add_gateway(b, Ipv4::parse("198.51.100.2"), ttl);
    host[0] = net.attach(*gw[0], Ipv4::parse("10.0.0.12"));
    host[1] = net.attach(*gw[1], Ipv4::parse("10.0.0.12"));  // same private address on both sites
    net.spawn(
        "rendezvous", [this] {
          server = std::make_unique<RendezvousServer>(rdv_host, 9000);
          server->run();
        },
        true);
  }

  void worker(std::uint32_t rank, Duration start_delay = {}) {
    net.spawn("rank" + std::to_string(rank), [this, rank, start_delay] {
      auto& h = *host[rank];
      auto& o = out[rank];
      h.sleep_for(start_delay);
      auto listener = h.listen(9000 + rank, true);
      o.internal = listener->local();
      RendezvousClient rc(h, {kRdvHost, 9000}, listener->local().port, h.now() + 10s);
      o.registered = rc.register_worker(kJob, rank, 2, h.now() + 10s);
      PunchSetup setup{h, *listener, rc, kJob, rank, 2};
      try {
        auto ch = punch_connect(setup, 1 - rank);
        net::send_frame(h, *ch, wire::Frame{wire::MsgType::Data, rank, 5, to_bytes("from " + std::to_string(rank))},
                        h.now() + 5s);
        o.received = to_string(net::recv_frame(h, *ch, h.now() + 5s).payload);
        h.sleep_for(100ms);  // let both sides finish reading before teardown
        rc.close();
        listener.reset();
        h.sleep_for(50ms);
        o.connections_after = h.connection_count();
      } catch (const Error& e) {
        o.error = e.code();
      }
    });
  }

  void run() {
    worker(0);
    worker(1);
    net.run();
  }
};

}  // namespace

TEST_CASE("retry policy schedule") {
  RetryPolicy p;
  CHECK(p.delay(0) == 100ms);
  CHECK(p.delay(3) == 800ms);
  CHECK(p.budget() == 102300ms);  // 100 * (2^10 - 1)
}

TEST_CASE("server records the NAT external address, not the internal one") {
  TwoSites sites(NatPolicy::AddressRestricted, NatPolicy::AddressRestricted);
  sites.run();
  for (std::uint32_t r = 0; r < 2; ++r) {
    const auto mapped = sites.gw[r]->external_for(sites.out[r].internal, {kRdvHost, 9000});
    REQUIRE(mapped);
    CHECK(sites.out[r].registered == *mapped);
    CHECK(sites.out[r].registered.host == sites.gw[r]->external_host());
    CHECK(sites.out[r].registered != sites.out[r].internal);
  }
}

TEST_CASE("address-restricted pair punches and exchanges data") {
  TwoSites sites(NatPolicy::AddressRestricted, NatPolicy::AddressRestricted);
  sites.run();
  CHECK_FALSE(sites.out[0].error);
  CHECK_FALSE(sites.out[1].error);
  CHECK(sites.out[0].received == "from 1");
  CHECK(sites.out[1].received == "from 0");
  // Exactly one connection survives on each side.
  CHECK(sites.out[0].connections_after == 1);
  CHECK(sites.out[1].connections_after == 1);
}

TEST_CASE("punch outcome follows the NAT policy of both sides") {
  const NatPolicy all[] = {NatPolicy::FullCone, NatPolicy::AddressRestricted, NatPolicy::Symmetric};
  for (auto a : all) {
    for (auto b : all) {
      CAPTURE(to_string(a));
      CAPTURE(to_string(b));
      TwoSites sites(a, b);
      sites.run();
      const bool expect_ok = a != NatPolicy::Symmetric && b != NatPolicy::Symmetric;
      for (int r = 0; r < 2; ++r) {
        if (expect_ok) {
          CHECK_FALSE(sites.out[r].error);
          CHECK(sites.out[r].received == "from " + std::to_string(1 - r));
        } else {
          REQUIRE(sites.out[r].error);
          CHECK(*sites.out[r].error == ErrorCode::HolePunchFailed);
        }
      }
    }
  }
}

TEST_CASE("peer address request is held until the peer registers") {
  VirtualNetwork net;
  auto rdv_host = net.add_public_host(kRdvHost);
  auto a = net.add_public_host(Ipv4::parse("198.51.100.5"));
  auto b = net.add_public_host(Ipv4::parse("198.51.100.6"));
  net.spawn(
      "rdv", [&] { RendezvousServer(rdv_host, 9000).run(); }, true);
  PeerAddress got;
  Duration answered_at{};
  net.spawn("a", [&] {
    RendezvousClient rc(*a, {kRdvHost, 9000}, 5000, a->now() + 5s);
    rc.register_worker(kJob, 0, 2, a->now() + 5s);
    got = rc.peer_address(kJob, 1, a->now() + 10s);
    answered_at = a->now();
  });
  net.spawn("b", [&] {
    b->sleep_for(1s);
    RendezvousClient rc(*b, {kRdvHost, 9000}, 6000, b->now() + 5s);
    rc.register_worker(kJob, 1, 2, b->now() + 5s);
    b->sleep_for(1s);
  });
  net.run();
  CHECK(got == Endpoint::parse("198.51.100.6:6000"));
  CHECK(answered_at >= 1s);
  CHECK(answered_at < 1s + 50ms);
}

TEST_CASE("duplicate rank from another source is rejected") {
  VirtualNetwork net;
  auto rdv_host = net.add_public_host(kRdvHost);
  auto a = net.add_public_host(Ipv4::parse("198.51.100.5"));
  auto b = net.add_public_host(Ipv4::parse("198.51.100.6"));
  net.spawn(
      "rdv", [&] { RendezvousServer(rdv_host, 9000).run(); }, true);
  std::optional<ErrorCode> second;
  net.spawn("a", [&] {
    RendezvousClient rc(*a, {kRdvHost, 9000}, 5000, a->now() + 5s);
    rc.register_worker(kJob, 0, 2, a->now() + 5s);
    a->sleep_for(2s);
  });
  net.spawn("b", [&] {
    b->sleep_for(100ms);
    RendezvousClient rc(*b, {kRdvHost, 9000}, 6000, b->now() + 5s);
    try {
      rc.register_worker(kJob, 0, 2, b->now() + 5s);
    } catch (const Error& e) {
      second = e.code();
    }
  });
  net.run();
  CHECK(second == ErrorCode::DuplicateRank);
}

TEST_CASE("punch times out when the peer never registers") {
  VirtualNetwork net;
  auto rdv_host = net.add_public_host(kRdvHost);
  auto a = net.add_public_host(Ipv4::parse("198.51.100.5"));
  net.spawn(
      "rdv", [&] { RendezvousServer(rdv_host, 9000, 60s).run(); }, true);
  std::optional<ErrorCode> err;
  net.spawn("a", [&] {
    auto l = a->listen(5000, true);
    RendezvousClient rc(*a, {kRdvHost, 9000}, 5000, a->now() + 5s);
    rc.register_worker(kJob, 0, 2, a->now() + 5s);
    PunchSetup setup{*a, *l, rc, kJob, 0, 2};
    setup.lookup_timeout = 3s;
    try {
      punch_connect(setup, 1);
    } catch (const Error& e) {
      err = e.code();
    }
  });
  net.run();
  CHECK(err == ErrorCode::Timeout);
}

TEST_CASE("loopback punch over real tcp connects without NAT") {
  auto server_transport = std::make_shared<net::TcpTransport>(Ipv4::parse("127.0.0.1"));
  RendezvousServer server(server_transport, 0);
  const Endpoint addr{Ipv4::parse("127.0.0.1"), server.local().port};
  std::jthread loop([&](std::stop_token st) { server.run(st); });

  std::string got[2];
  std::optional<std::string> failure[2];
  {
    std::vector<std::jthread> workers;
    for (std::uint32_t rank = 0; rank < 2; ++rank) {
      workers.emplace_back([&, rank] {
        try {
          net::TcpTransport t(Ipv4::parse("127.0.0.1"));
          auto l = t.listen(0, true);
          RendezvousClient rc(t, addr, l->local().port, t.now() + 5s);
          rc.register_worker(JobId("loop"), rank, 2, t.now() + 5s);
          PunchSetup setup{t, *l, rc, JobId("loop"), rank, 2};
          auto ch = punch_connect(setup, 1 - rank);
          net::send_frame(t, *ch, wire::Frame{wire::MsgType::Data, rank, 1, to_bytes(std::to_string(rank))}, t.now() + 5s);
          got[rank] = to_string(net::recv_frame(t, *ch, t.now() + 5s).payload);
        } catch (const std::exception& e) {
          failure[rank] = e.what();
        }
      });
    }
  }
  CHECK_FALSE(failure[0]);
  CHECK_FALSE(failure[1]);
  CHECK(got[0] == "1");
  CHECK(got[1] == "0");
}
