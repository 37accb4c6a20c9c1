#pragma once

#include <functional>
#include <optional>

#include "punchgrid/bootstrap/kv.hpp"
#include "punchgrid/comm/communicator.hpp"
#include "punchgrid/natsim/network.hpp"
#include "punchgrid/rendezvous/rendezvous.hpp"

namespace punchgrid::natsim {

struct ClusterConfig {
  std::uint32_t world_size = 2;
  /// NAT in front of each worker, by launch index; missing entries use
  /// `default_policy`.
  std::vector<NatPolicy> policies;
  NatPolicy default_policy = NatPolicy::AddressRestricted;
  Duration mapping_ttl = std::chrono::seconds(30);
  /// Delay before worker i starts, by launch index.
  std::vector<Duration> start_delays;
  NetworkConfig network;
  comm::CommConfig comm;
  std::string job = "sim";
};

struct WorkerOutcome {
  std::optional<std::uint32_t> rank;
  std::optional<ErrorCode> error;
  std::string error_text;
  Duration finished_at{};
};

/// A kv server, a rendezvous server and one NAT site per worker on a
/// VirtualNetwork. Each worker runs comm_init and then the supplied body.
class SimCluster {
 public:
  using Body = std::function<void(comm::Communicator&)>;

  explicit SimCluster(ClusterConfig config);

  /// Runs every worker to completion. Callable once.
  std::vector<WorkerOutcome> run(const Body& body);

  VirtualNetwork& network() { return net_; }
  NatGateway& gateway(std::uint32_t index) { return *gateways_.at(index); }
  HostStack& host(std::uint32_t index) { return *hosts_.at(index); }
  Endpoint kv_address() const;
  Endpoint rendezvous_address() const;
  const ClusterConfig& config() const { return config_; }

 private:
  ClusterConfig config_;
  VirtualNetwork net_;
  std::shared_ptr<HostStack> kv_host_;
  std::shared_ptr<HostStack> rdv_host_;
  std::vector<NatGateway*> gateways_;
  std::vector<std::shared_ptr<HostStack>> hosts_;
  bool ran_ = false;
};

}  // namespace punchgrid::natsim
