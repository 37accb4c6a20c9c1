#include "punchgrid/natsim/cluster.hpp"

namespace punchgrid::natsim {

namespace {

const Ipv4 kKvIp = Ipv4::parse("203.0.113.10");
const Ipv4 kRdvIp = Ipv4::parse("203.0.113.20");
constexpr std::uint16_t kKvPort = 7000;
constexpr std::uint16_t kRdvPort = 7001;

}  // namespace

SimCluster::SimCluster(ClusterConfig config) : config_(std::move(config)), net_(config_.network) {
  if (config_.world_size == 0 || config_.world_size > 250)
    fail(ErrorCode::InvalidArgument, "simulated clusters hold 1-250 workers");
  kv_host_ = net_.add_public_host(kKvIp);
  rdv_host_ = net_.add_public_host(kRdvIp);
  for (std::uint32_t i = 0; i < config_.world_size; ++i) {
    const auto policy = i < config_.policies.size() ? config_.policies[i] : config_.default_policy;
    // 198.51.100.0/24 for NAT external addresses; every site reuses the same
    // private address, as independent serverless sandboxes do.
    auto& gw = net_.add_gateway(policy, Ipv4(Ipv4::parse("198.51.100.0").value + 1 + i), config_.mapping_ttl);
    gateways_.push_back(&gw);
    hosts_.push_back(net_.attach(gw, Ipv4::parse("10.0.0.2")));
  }
}

Endpoint SimCluster::kv_address() const { return {kKvIp, kKvPort}; }
Endpoint SimCluster::rendezvous_address() const { return {kRdvIp, kRdvPort}; }

std::vector<WorkerOutcome> SimCluster::run(const Body& body) {
  if (ran_) fail(ErrorCode::InvalidArgument, "SimCluster::run called twice");
  ran_ = true;

  net_.spawn(
      "kv", [this] { bootstrap::KvServer(kv_host_, kKvPort).run(); }, true);
  net_.spawn(
      "rendezvous", [this] { rendezvous::RendezvousServer(rdv_host_, kRdvPort).run(); }, true);

  std::vector<WorkerOutcome> out(config_.world_size);
  const bootstrap::JobId job(config_.job);
  for (std::uint32_t i = 0; i < config_.world_size; ++i) {
    net_.spawn("worker" + std::to_string(i), [this, i, &out, &body, &job] {
      auto& o = out[i];
      auto host = hosts_[i];
      try {
        if (i < config_.start_delays.size()) host->sleep_for(config_.start_delays[i]);
        auto comm = comm::comm_init(host, job, kv_address(), rendezvous_address(), config_.world_size, config_.comm);
        o.rank = comm->rank();
        body(*comm);
        comm->finalize();
      } catch (const Error& e) {
        o.error = e.code();
        o.error_text = e.what();
      } catch (const std::exception& e) {
        o.error = ErrorCode::Io;
        o.error_text = e.what();
      }
      o.finished_at = host->now();
    });
  }
  net_.run();
  return out;
}

}  // namespace punchgrid::natsim
