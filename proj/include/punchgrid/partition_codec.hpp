#pragma once

#include "punchgrid/table/partition.hpp"
#include "punchgrid/wire.hpp"

namespace punchgrid::wire {

/// Columnar layout used on the network:
///   buffer 0      schema block: u32 column count, then per column
///                 u16 name length, UTF-8 name, u8 TypeTag
///   INT64/FLOAT64 one buffer of 8*N little-endian bytes
///   UTF8          two buffers: (N+1) u64 offsets, concatenated bytes
BufferSet serialize_partition(const table::Partition& p);
table::Partition deserialize_partition(const BufferSet& buffers);

/// Convenience: serialize straight into one length-prefixed payload.
Bytes partition_to_bytes(const table::Partition& p);
table::Partition partition_from_bytes(ByteView bytes);

}  // namespace punchgrid::wire
