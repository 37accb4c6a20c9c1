#pragma once

#include <string>

#include "punchgrid/bootstrap/kv.hpp"

namespace punchgrid::bootstrap {

/// Namespace for one job's keys: 1-64 bytes, no whitespace and no '/'.
class JobId {
 public:
  explicit JobId(std::string id);
  const std::string& str() const { return id_; }
  std::string key(std::string_view suffix) const { return id_ + "/" + std::string(suffix); }
  std::string prefix() const { return id_ + "/"; }

  friend bool operator==(const JobId&, const JobId&) = default;

 private:
  std::string id_;
};

struct WorkerRegistration {
  std::uint32_t rank = 0;
  std::uint32_t world_size = 0;
  Endpoint endpoint;

  friend bool operator==(const WorkerRegistration&, const WorkerRegistration&) = default;
};

struct LockHandle {
  JobId job;
  std::string name;
  std::uint32_t holder_rank = 0;
};

inline constexpr Duration kDefaultEndpointTimeout = std::chrono::seconds(30);
inline constexpr Duration kEndpointPollInterval = std::chrono::milliseconds(50);

/// Atomically claims the next rank: the counter value before increment.
/// Throws WorldFull once world_size ranks are out.
std::uint32_t next_rank(KvClient& store, const JobId& job, std::uint32_t world_size);

void put_endpoint(KvClient& store, const JobId& job, const WorkerRegistration& reg);

/// Polls until `rank` has published its registration.
WorkerRegistration get_endpoint(KvClient& store, const JobId& job, std::uint32_t rank,
                                Duration timeout = kDefaultEndpointTimeout);

LockHandle acquire_ordered_lock(KvClient& store, const JobId& job, const std::string& name, std::uint32_t rank,
                                Duration timeout = kDefaultEndpointTimeout);
void release_ordered_lock(KvClient& store, const LockHandle& handle);

/// Removes every key of the job. Returns the number removed.
std::size_t clear_job(KvClient& store, const JobId& job);

}  // namespace punchgrid::bootstrap
