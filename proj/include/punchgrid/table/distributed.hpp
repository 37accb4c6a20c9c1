#pragma once

#include "punchgrid/comm/communicator.hpp"
#include "punchgrid/table/partition.hpp"

namespace punchgrid::table {

/// This rank's shard of a table spread over `world_size` ranks. Global row
/// order is (rank, local row).
struct DistributedTable {
  Partition local;
  std::uint32_t rank = 0;
  std::uint32_t world_size = 1;
};

/// Sum of every rank's local length. Collective.
std::uint64_t total_length(comm::Communicator& c, const DistributedTable& t);

/// Hash-shuffles both sides with alltoallv and joins locally. Each rank ends
/// up with the part of the global join whose keys hash to it. Collective.
DistributedTable distributed_join(comm::Communicator& c, const DistributedTable& left,
                                  const DistributedTable& right, std::size_t key_col);

}  // namespace punchgrid::table
