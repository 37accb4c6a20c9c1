#include "punchgrid/table/distributed.hpp"

#include "punchgrid/partition_codec.hpp"
#include "punchgrid/table/ops.hpp"

namespace punchgrid::table {

namespace {

Partition shuffle(comm::Communicator& c, const Partition& local, std::size_t key_col, std::uint32_t tag) {
  const auto buckets = hash_partition(local, key_col, c.world_size());
  std::vector<Bytes> out;
  out.reserve(buckets.size());
  for (const auto& b : buckets) out.push_back(wire::partition_to_bytes(b));
  const auto in = c.alltoallv(out, tag);
  std::vector<Partition> received;
  received.reserve(in.size());
  for (const auto& bytes : in) received.push_back(wire::partition_from_bytes(bytes));
  return concat(received);
}

}  // namespace

std::uint64_t total_length(comm::Communicator& c, const DistributedTable& t) {
  Bytes mine;
  put_le<std::uint64_t>(mine, t.local.num_rows());
  std::uint64_t total = 0;
  for (const auto& b : c.allgather(mine)) total += get_le<std::uint64_t>(b);
  return total;
}

DistributedTable distributed_join(comm::Communicator& c, const DistributedTable& left,
                                  const DistributedTable& right, std::size_t key_col) {
  if (left.world_size != c.world_size() || right.world_size != c.world_size()) {
    fail(ErrorCode::InvalidArgument, "table world size differs from the communicator's " +
                                         std::to_string(c.world_size()));
  }
  auto l = shuffle(c, left.local, key_col, comm::tags::kJoinLeft);
  auto r = shuffle(c, right.local, key_col, comm::tags::kJoinRight);
  return DistributedTable{local_join(l, r, key_col), c.rank(), c.world_size()};
}

}  // namespace punchgrid::table
