#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "punchgrid/error.hpp"

namespace punchgrid {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }
inline std::string to_string(ByteView b) { return std::string(b.begin(), b.end()); }

// Little-endian append helpers. The wire format is fixed little-endian
// regardless of host order.
template <typename T>
void put_le(Bytes& out, T value) {
  static_assert(std::is_integral_v<T>);
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
}

template <typename T>
T get_le(ByteView in) {
  static_assert(std::is_integral_v<T>);
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    u |= static_cast<U>(in[i]) << (8 * i);
  }
  return static_cast<T>(u);
}

/// Bounds-checked sequential reader; running off the end raises `on_short`.
class ByteReader {
 public:
  ByteReader(ByteView data, ErrorCode on_short) : data_(data), on_short_(on_short) {}

  template <typename T>
  T read() {
    need(sizeof(T));
    T v = get_le<T>(data_.subspan(pos_, sizeof(T)));
    pos_ += sizeof(T);
    return v;
  }

  ByteView take(std::size_t n) {
    need(n);
    auto v = data_.subspan(pos_, n);
    pos_ += n;
    return v;
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) {
      fail(on_short_, "need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) + ", have " +
                          std::to_string(data_.size() - pos_));
    }
  }

  ByteView data_;
  std::size_t pos_ = 0;
  ErrorCode on_short_;
};

std::string base64_encode(ByteView data);
Bytes base64_decode(std::string_view text);

}  // namespace punchgrid
