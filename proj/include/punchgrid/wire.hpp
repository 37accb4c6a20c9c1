#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "punchgrid/bytes.hpp"

namespace punchgrid::wire {

inline constexpr std::array<std::uint8_t, 4> kMagic = {0x50, 0x47, 0x52, 0x44};  // "PGRD"
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 22;

enum class MsgType : std::uint8_t {
  Data = 0,
  Ping = 1,
  Pong = 2,
  Register = 3,
  PeerAddr = 4,
  KvCmd = 5,
  KvReply = 6,
};

struct Frame {
  MsgType type = MsgType::Data;
  std::uint32_t src_rank = 0;
  std::uint32_t tag = 0;
  Bytes payload;

  friend bool operator==(const Frame&, const Frame&) = default;
};

Bytes encode_frame(const Frame& f);
void encode_frame_into(const Frame& f, Bytes& out);

/// Decodes exactly one frame occupying the whole input.
Frame decode_frame(ByteView bytes);

/// Streaming form: returns the frame and the number of bytes it consumed, or
/// nullopt when `bytes` does not yet hold a complete frame. Header corruption
/// throws immediately.
std::optional<std::pair<Frame, std::size_t>> try_decode_frame(ByteView bytes);

/// Ordered list of byte buffers; each buffer is written as a u64 length
/// followed by its bytes. The buffer count is implied by the enclosing length.
using BufferSet = std::vector<Bytes>;

Bytes encode_buffers(const BufferSet& set);
BufferSet decode_buffers(ByteView bytes);

}  // namespace punchgrid::wire
