#include "punchgrid/comm/communicator.hpp"

namespace punchgrid::comm {

std::unique_ptr<Communicator> comm_init(std::shared_ptr<net::Transport> transport, const JobId& job,
                                        const Endpoint& kv_addr, const Endpoint& rendezvous_addr,
                                        std::uint32_t world_size, const CommConfig& config) {
  config.validate();
  auto& t = *transport;
  const auto start = t.now();
  const auto deadline = start + config.op_timeout;

  bootstrap::KvClient kv(t, kv_addr, config.op_timeout);
  const auto rank = bootstrap::next_rank(kv, job, world_size);

  std::vector<std::unique_ptr<net::FrameChannel>> peers(world_size);
  if (world_size == 1) {
    bootstrap::put_endpoint(kv, job, {rank, world_size, Endpoint{}});
    auto comm = std::make_unique<Communicator>(std::move(transport), rank, world_size, std::move(peers), config);
    comm->init_time_ = t.now() - start;
    return comm;
  }

  // Registration and punching share one local port so the NAT mapping the
  // rendezvous observed is the one peers aim at.
  auto listener = t.listen(0, true);
  rendezvous::RendezvousClient rdv(t, rendezvous_addr, listener->local().port, deadline);
  const auto external = rdv.register_worker(job, rank, world_size, deadline);
  bootstrap::put_endpoint(kv, job, {rank, world_size, external});

  rendezvous::PunchSetup setup{t, *listener, rdv, job, rank, world_size, config.connect_retry};
  setup.lookup_timeout = deadline > t.now() ? deadline - t.now() : Duration::zero();
  setup.keepalive_interval = config.keepalive_interval;
  std::vector<std::uint32_t> others;
  for (std::uint32_t r = 0; r < world_size; ++r) {
    if (r != rank) others.push_back(r);
  }
  auto connections = rendezvous::punch_all(setup, others);
  for (auto& [r, ch] : connections) peers[r] = std::move(ch);

  auto comm = std::make_unique<Communicator>(std::move(transport), rank, world_size, std::move(peers), config);
  comm->barrier();
  rdv.close();
  kv.close();
  comm->init_time_ = t.now() - start;
  return comm;
}

}  // namespace punchgrid::comm
