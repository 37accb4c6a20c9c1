#include <random>

#include "doctest.h"
#include "punchgrid/error.hpp"
#include "punchgrid/partition_codec.hpp"
#include "punchgrid/wire.hpp"

using namespace punchgrid;
using namespace punchgrid::wire;
using table::Field;
using table::Partition;
using table::Schema;
using table::TypeTag;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::Io;
}

Partition random_partition(std::mt19937_64& rng) {
  const std::size_t cols = 1 + rng() % 4;
  const std::size_t rows = rng() % 50;
  std::vector<Field> fields;
  std::vector<table::Column> columns;
  for (std::size_t c = 0; c < cols; ++c) {
    const auto tag = TypeTag(rng() % 3);
    fields.push_back({"c" + std::to_string(c), tag});
    switch (tag) {
      case TypeTag::Int64: {
        table::Int64Column v(rows);
        for (auto& x : v) x = std::int64_t(rng());
        columns.emplace_back(std::move(v));
        break;
      }
      case TypeTag::Float64: {
        table::Float64Column v(rows);
        for (auto& x : v) x = std::bit_cast<double>(rng());  // includes NaNs and infinities
        columns.emplace_back(std::move(v));
        break;
      }
      case TypeTag::Utf8: {
        table::Utf8Column v(rows);
        for (auto& s : v) s = std::string(rng() % 12, char('a' + rng() % 26));
        columns.emplace_back(std::move(v));
        break;
      }
    }
  }
  return Partition(Schema(fields), std::move(columns));
}

}  // namespace

TEST_CASE("frame header layout is byte exact") {
  const Frame f{MsgType::KvCmd, 0x01020304, 0xA0B0C0D0, to_bytes("hi")};
  const Bytes expected = {'P', 'G', 'R', 'D', 1, 5,
                          0x04, 0x03, 0x02, 0x01,
                          0xD0, 0xC0, 0xB0, 0xA0,
                          2, 0, 0, 0, 0, 0, 0, 0,
                          'h', 'i'};
  CHECK(encode_frame(f) == expected);
  CHECK(decode_frame(expected) == f);
}

TEST_CASE("frame round trip property") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 10000; ++i) {
    Frame f;
    f.type = MsgType(rng() % 7);
    f.src_rank = std::uint32_t(rng());
    f.tag = std::uint32_t(rng());
    f.payload.resize(rng() % 300);
    for (auto& b : f.payload) b = std::uint8_t(rng());
    const auto bytes = encode_frame(f);
    REQUIRE(bytes.size() == kHeaderSize + f.payload.size());
    REQUIRE(decode_frame(bytes) == f);

    // Any strict prefix is incomplete rather than wrong.
    const auto cut = rng() % bytes.size();
    REQUIRE_FALSE(try_decode_frame(ByteView(bytes).first(cut)).has_value());
    if (cut >= 6) REQUIRE(code_of([&] { decode_frame(ByteView(bytes).first(cut)); }) == ErrorCode::Truncated);
  }
}

TEST_CASE("frame decoding rejects corrupt headers") {
  auto bytes = encode_frame(Frame{MsgType::Data, 1, 2, to_bytes("xyz")});
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(code_of([&] { decode_frame(bad_magic); }) == ErrorCode::BadMagic);
  auto bad_version = bytes;
  bad_version[4] = 2;
  CHECK(code_of([&] { decode_frame(bad_version); }) == ErrorCode::BadVersion);
  auto bad_type = bytes;
  bad_type[5] = 7;
  CHECK(code_of([&] { decode_frame(bad_type); }) == ErrorCode::UnknownMsgType);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK(code_of([&] { decode_frame(trailing); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("streaming decode yields back to back frames") {
  Bytes stream;
  encode_frame_into(Frame{MsgType::Ping, 3, 0, {}}, stream);
  encode_frame_into(Frame{MsgType::Data, 3, 9, to_bytes("abc")}, stream);
  auto a = try_decode_frame(stream);
  REQUIRE(a);
  CHECK(a->first.type == MsgType::Ping);
  CHECK(a->second == kHeaderSize);
  auto b = try_decode_frame(ByteView(stream).subspan(a->second));
  REQUIRE(b);
  CHECK(b->first.payload == to_bytes("abc"));
}

TEST_CASE("buffer sets round trip, including empty buffers") {
  const BufferSet set = {Bytes{}, to_bytes("a"), Bytes(1000, 7), Bytes{}};
  const auto bytes = encode_buffers(set);
  CHECK(bytes.size() == 4 * 8 + 1 + 1000);
  CHECK(decode_buffers(bytes) == set);
  CHECK(decode_buffers(Bytes{}).empty());
  auto cut = bytes;
  cut.pop_back();
  CHECK(code_of([&] { decode_buffers(cut); }) == ErrorCode::Truncated);
}

TEST_CASE("partition codec layout") {
  const Partition p(Schema({{"k", TypeTag::Int64}, {"s", TypeTag::Utf8}}),
                    {table::Int64Column{5, -1}, table::Utf8Column{"ab", ""}});
  const auto bufs = serialize_partition(p);
  REQUIRE(bufs.size() == 4);
  const Bytes schema_block = {2, 0, 0, 0, 1, 0, 'k', 0, 1, 0, 's', 2};
  CHECK(bufs[0] == schema_block);
  CHECK(bufs[1].size() == 16);
  CHECK(bufs[2].size() == 3 * 8);
  CHECK(bufs[3] == to_bytes("ab"));
  CHECK(deserialize_partition(bufs) == p);
}

TEST_CASE("partition round trip property") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 2000; ++i) {
    const auto p = random_partition(rng);
    REQUIRE(deserialize_partition(serialize_partition(p)) == p);
    REQUIRE(partition_from_bytes(partition_to_bytes(p)) == p);
  }
}

TEST_CASE("partition codec rejects malformed input") {
  const Partition p(Schema({{"k", TypeTag::Int64}, {"s", TypeTag::Utf8}}),
                    {table::Int64Column{5, -1}, table::Utf8Column{"ab", ""}});
  const auto good = serialize_partition(p);

  auto missing = good;
  missing.pop_back();
  CHECK(code_of([&] { deserialize_partition(missing); }) == ErrorCode::MalformedSchemaBlock);

  auto bad_tag = good;
  bad_tag[0][7] = 9;
  CHECK(code_of([&] { deserialize_partition(bad_tag); }) == ErrorCode::UnsupportedType);

  auto short_block = good;
  short_block[0].resize(5);
  CHECK(code_of([&] { deserialize_partition(short_block); }) == ErrorCode::MalformedSchemaBlock);

  auto ragged = good;
  ragged[1].pop_back();
  CHECK(code_of([&] { deserialize_partition(ragged); }) == ErrorCode::LengthMismatch);

  auto offsets_past_end = good;
  offsets_past_end[3].pop_back();
  CHECK(code_of([&] { deserialize_partition(offsets_past_end); }) == ErrorCode::LengthMismatch);

  CHECK(code_of([&] { deserialize_partition({}); }) == ErrorCode::MalformedSchemaBlock);
}
