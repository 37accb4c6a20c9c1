#include "punchgrid/bootstrap/bootstrap.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace punchgrid::bootstrap {

JobId::JobId(std::string id) : id_(std::move(id)) {
  if (id_.empty() || id_.size() > 64) fail(ErrorCode::InvalidArgument, "job id must be 1-64 bytes");
  const bool bad = std::any_of(id_.begin(), id_.end(), [](unsigned char ch) {
    return std::isspace(ch) || ch == '/' || ch < 0x20;
  });
  if (bad) fail(ErrorCode::InvalidArgument, "job id may not contain whitespace or '/': " + id_);
}

std::uint32_t next_rank(KvClient& store, const JobId& job, std::uint32_t world_size) {
  if (world_size == 0) fail(ErrorCode::InvalidArgument, "world size must be positive");
  const auto r = store.incr(job.key("rank_counter"));
  if (r < 0 || r >= static_cast<std::int64_t>(world_size))
    fail(ErrorCode::WorldFull, "job " + job.str() + " already has " + std::to_string(world_size) + " ranks");
  return static_cast<std::uint32_t>(r);
}

namespace {

std::string endpoint_key(const JobId& job, std::uint32_t rank) { return job.key("endpoint/" + std::to_string(rank)); }

}  // namespace

void put_endpoint(KvClient& store, const JobId& job, const WorkerRegistration& reg) {
  const auto text = std::to_string(reg.rank) + " " + std::to_string(reg.world_size) + " " + reg.endpoint.str();
  store.set(endpoint_key(job, reg.rank), to_bytes(text));
}

WorkerRegistration get_endpoint(KvClient& store, const JobId& job, std::uint32_t rank, Duration timeout) {
  auto& t = store.transport();
  const auto deadline = t.now() + timeout;
  while (true) {
    if (auto v = store.get(endpoint_key(job, rank))) {
      std::istringstream in(to_string(*v));
      WorkerRegistration reg;
      std::string ep;
      if (!(in >> reg.rank >> reg.world_size >> ep)) fail(ErrorCode::ProtocolError, "malformed endpoint record");
      reg.endpoint = Endpoint::parse(ep);
      return reg;
    }
    if (t.now() >= deadline)
      fail(ErrorCode::Timeout, "rank " + std::to_string(rank) + " of job " + job.str() + " never registered");
    t.sleep_until(std::min(deadline, t.now() + kEndpointPollInterval));
  }
}

LockHandle acquire_ordered_lock(KvClient& store, const JobId& job, const std::string& name, std::uint32_t rank,
                                Duration timeout) {
  LockHandle h{job, job.key("lock/" + name), rank};
  store.lock(h.name, rank, timeout);
  return h;
}

void release_ordered_lock(KvClient& store, const LockHandle& handle) { store.unlock(handle.name, handle.holder_rank); }

std::size_t clear_job(KvClient& store, const JobId& job) { return store.del(job.prefix()); }

}  // namespace punchgrid::bootstrap
