#pragma once

#include <cstdint>
#include <vector>

#include "punchgrid/bytes.hpp"
#include "punchgrid/table/partition.hpp"

namespace punchgrid::table {

/// FNV-1a, 64-bit.
std::uint64_t fnv1a64(ByteView data);
/// FNV-1a over the 8 little-endian bytes of `key`.
std::uint64_t fnv1a64(std::int64_t key);

/// Bucket that owns `key` among `buckets` destinations.
inline std::uint32_t bucket_of(std::int64_t key, std::uint32_t buckets) {
  return static_cast<std::uint32_t>(fnv1a64(key) % buckets);
}

/// Splits `p` into `buckets` partitions by key hash. Rows keep their relative
/// order inside a bucket.
std::vector<Partition> hash_partition(const Partition& p, std::size_t key_col, std::uint32_t buckets);

/// Inner sort-merge join on an INT64 key column at the same index in both
/// inputs. Output columns: every left column, then the right columns minus
/// its key; a right name already taken gets an "_r" suffix. Rows come out by
/// key, then left row order, then right row order.
Partition local_join(const Partition& left, const Partition& right, std::size_t key_col);

/// Rows of every part in argument order. All schemas must be identical.
Partition concat(const std::vector<Partition>& parts);

}  // namespace punchgrid::table
