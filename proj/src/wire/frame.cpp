#include <algorithm>

#include "punchgrid/wire.hpp"

namespace punchgrid::wire {
namespace {

// Upper bound on a single payload. Anything larger is treated as a corrupt
// header rather than an allocation request.
constexpr std::uint64_t kMaxPayload = std::uint64_t{1} << 34;

MsgType checked_type(std::uint8_t raw) {
  if (raw > static_cast<std::uint8_t>(MsgType::KvReply)) {
    fail(ErrorCode::UnknownMsgType, "msg_type " + std::to_string(raw));
  }
  return static_cast<MsgType>(raw);
}

struct Header {
  MsgType type;
  std::uint32_t src_rank;
  std::uint32_t tag;
  std::uint64_t payload_len;
};

// Requires at least kHeaderSize bytes.
Header parse_header(ByteView bytes) {
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    fail(ErrorCode::BadMagic, "frame does not start with PGRD");
  }
  if (bytes[4] != kVersion) {
    fail(ErrorCode::BadVersion, "version " + std::to_string(bytes[4]));
  }
  Header h{checked_type(bytes[5]), get_le<std::uint32_t>(bytes.subspan(6, 4)),
           get_le<std::uint32_t>(bytes.subspan(10, 4)), get_le<std::uint64_t>(bytes.subspan(14, 8))};
  if (h.payload_len > kMaxPayload) {
    fail(ErrorCode::Truncated, "implausible payload_len " + std::to_string(h.payload_len));
  }
  return h;
}

}  // namespace

void encode_frame_into(const Frame& f, Bytes& out) {
  out.reserve(out.size() + kHeaderSize + f.payload.size());
  out.insert(out.end(), kMagic.begin(), kMagic.end());
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(f.type));
  put_le(out, f.src_rank);
  put_le(out, f.tag);
  put_le(out, static_cast<std::uint64_t>(f.payload.size()));
  out.insert(out.end(), f.payload.begin(), f.payload.end());
}

Bytes encode_frame(const Frame& f) {
  Bytes out;
  encode_frame_into(f, out);
  return out;
}

std::optional<std::pair<Frame, std::size_t>> try_decode_frame(ByteView bytes) {
  // Validate magic as soon as the bytes are there so garbage fails fast.
  const std::size_t magic_avail = std::min(bytes.size(), kMagic.size());
  if (!std::equal(bytes.begin(), bytes.begin() + magic_avail, kMagic.begin())) {
    fail(ErrorCode::BadMagic, "frame does not start with PGRD");
  }
  if (bytes.size() < kHeaderSize) return std::nullopt;
  const Header h = parse_header(bytes);
  const std::size_t total = kHeaderSize + h.payload_len;
  if (bytes.size() < total) return std::nullopt;
  Frame f{h.type, h.src_rank, h.tag, Bytes(bytes.begin() + kHeaderSize, bytes.begin() + total)};
  return std::make_pair(std::move(f), total);
}

Frame decode_frame(ByteView bytes) {
  if (bytes.size() < kHeaderSize) {
    if (bytes.size() >= kMagic.size() && !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
      fail(ErrorCode::BadMagic, "frame does not start with PGRD");
    }
    fail(ErrorCode::Truncated, "header needs 22 bytes, have " + std::to_string(bytes.size()));
  }
  const Header h = parse_header(bytes);
  const std::size_t avail = bytes.size() - kHeaderSize;
  if (avail < h.payload_len) {
    fail(ErrorCode::Truncated,
         "payload_len " + std::to_string(h.payload_len) + " but " + std::to_string(avail) + " bytes follow");
  }
  if (avail > h.payload_len) {
    fail(ErrorCode::LengthMismatch, std::to_string(avail - h.payload_len) + " trailing bytes after frame");
  }
  return Frame{h.type, h.src_rank, h.tag, Bytes(bytes.begin() + kHeaderSize, bytes.end())};
}

Bytes encode_buffers(const BufferSet& set) {
  std::size_t total = 0;
  for (const auto& b : set) total += 8 + b.size();
  Bytes out;
  out.reserve(total);
  for (const auto& b : set) {
    put_le(out, static_cast<std::uint64_t>(b.size()));
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

BufferSet decode_buffers(ByteView bytes) {
  BufferSet set;
  ByteReader r(bytes, ErrorCode::Truncated);
  while (r.remaining() > 0) {
    const auto len = r.read<std::uint64_t>();
    if (len > r.remaining()) {
      fail(ErrorCode::Truncated, "buffer claims " + std::to_string(len) + " bytes, " +
                                     std::to_string(r.remaining()) + " remain");
    }
    auto v = r.take(static_cast<std::size_t>(len));
    set.emplace_back(v.begin(), v.end());
  }
  return set;
}

}  // namespace punchgrid::wire
