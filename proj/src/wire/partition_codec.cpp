#include "punchgrid/partition_codec.hpp"

#include <bit>
#include <limits>

namespace punchgrid::wire {

using table::Column;
using table::Field;
using table::TypeTag;

namespace {

Bytes schema_block(const table::Schema& schema) {
  Bytes out;
  put_le(out, static_cast<std::uint32_t>(schema.size()));
  for (const auto& f : schema.fields()) {
    if (f.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      fail(ErrorCode::UnsupportedType, "column name longer than 65535 bytes");
    }
    put_le(out, static_cast<std::uint16_t>(f.name.size()));
    out.insert(out.end(), f.name.begin(), f.name.end());
    out.push_back(static_cast<std::uint8_t>(f.type));
  }
  return out;
}

std::vector<Field> parse_schema_block(ByteView block) {
  ByteReader r(block, ErrorCode::MalformedSchemaBlock);
  const auto count = r.read<std::uint32_t>();
  std::vector<Field> fields;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.read<std::uint16_t>();
    auto name = to_string(r.take(len));
    const auto raw = r.read<std::uint8_t>();
    if (raw > static_cast<std::uint8_t>(TypeTag::Utf8)) {
      fail(ErrorCode::UnsupportedType, "type tag " + std::to_string(raw) + " for column '" + name + "'");
    }
    fields.push_back({std::move(name), static_cast<TypeTag>(raw)});
  }
  if (r.remaining() != 0) fail(ErrorCode::MalformedSchemaBlock, "trailing bytes after schema block");
  return fields;
}

template <typename T>
Bytes fixed_width(const std::vector<T>& values) {
  Bytes out;
  out.reserve(values.size() * 8);
  for (T v : values) {
    if constexpr (std::is_same_v<T, double>) {
      put_le(out, std::bit_cast<std::uint64_t>(v));
    } else {
      put_le(out, v);
    }
  }
  return out;
}

template <typename T>
std::vector<T> read_fixed_width(const Bytes& buf, const std::string& name) {
  if (buf.size() % 8 != 0) {
    fail(ErrorCode::LengthMismatch, "column '" + name + "' buffer is not a multiple of 8 bytes");
  }
  std::vector<T> out(buf.size() / 8);
  ByteView view(buf);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto raw = get_le<std::uint64_t>(view.subspan(i * 8, 8));
    if constexpr (std::is_same_v<T, double>) {
      out[i] = std::bit_cast<double>(raw);
    } else {
      out[i] = static_cast<T>(raw);
    }
  }
  return out;
}

table::Utf8Column read_utf8(const Bytes& offsets_buf, const Bytes& data, const std::string& name) {
  if (offsets_buf.size() % 8 != 0 || offsets_buf.empty()) {
    fail(ErrorCode::LengthMismatch, "column '" + name + "' offsets buffer must hold N+1 u64 values");
  }
  const auto offsets = read_fixed_width<std::uint64_t>(offsets_buf, name);
  if (offsets.front() != 0 || offsets.back() != data.size()) {
    fail(ErrorCode::LengthMismatch, "column '" + name + "' offsets do not span the data buffer");
  }
  table::Utf8Column out;
  out.reserve(offsets.size() - 1);
  for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
    if (offsets[i + 1] < offsets[i]) {
      fail(ErrorCode::LengthMismatch, "column '" + name + "' offsets decrease at row " + std::to_string(i));
    }
    out.emplace_back(data.begin() + static_cast<std::ptrdiff_t>(offsets[i]),
                     data.begin() + static_cast<std::ptrdiff_t>(offsets[i + 1]));
  }
  return out;
}

}  // namespace

BufferSet serialize_partition(const table::Partition& p) {
  BufferSet out;
  out.push_back(schema_block(p.schema()));
  for (const auto& col : p.columns()) {
    switch (table::type_of(col)) {
      case TypeTag::Int64:
        out.push_back(fixed_width(std::get<table::Int64Column>(col)));
        break;
      case TypeTag::Float64:
        out.push_back(fixed_width(std::get<table::Float64Column>(col)));
        break;
      case TypeTag::Utf8: {
        const auto& strings = std::get<table::Utf8Column>(col);
        Bytes offsets, data;
        offsets.reserve((strings.size() + 1) * 8);
        put_le(offsets, std::uint64_t{0});
        for (const auto& s : strings) {
          data.insert(data.end(), s.begin(), s.end());
          put_le(offsets, static_cast<std::uint64_t>(data.size()));
        }
        out.push_back(std::move(offsets));
        out.push_back(std::move(data));
        break;
      }
    }
  }
  return out;
}

table::Partition deserialize_partition(const BufferSet& buffers) {
  if (buffers.empty()) fail(ErrorCode::MalformedSchemaBlock, "no schema block");
  auto fields = parse_schema_block(buffers[0]);

  std::size_t expected = 1;
  for (const auto& f : fields) expected += f.type == TypeTag::Utf8 ? 2 : 1;
  if (buffers.size() != expected) {
    fail(ErrorCode::MalformedSchemaBlock, "schema declares " + std::to_string(fields.size()) + " columns needing " +
                                              std::to_string(expected - 1) + " buffers, got " +
                                              std::to_string(buffers.size() - 1));
  }

  std::vector<Column> columns;
  std::size_t next = 1;
  for (const auto& f : fields) {
    switch (f.type) {
      case TypeTag::Int64:
        columns.emplace_back(read_fixed_width<std::int64_t>(buffers[next++], f.name));
        break;
      case TypeTag::Float64:
        columns.emplace_back(read_fixed_width<double>(buffers[next++], f.name));
        break;
      case TypeTag::Utf8:
        columns.emplace_back(read_utf8(buffers[next], buffers[next + 1], f.name));
        next += 2;
        break;
    }
  }
  if (fields.empty()) fail(ErrorCode::MalformedSchemaBlock, "schema declares zero columns");
  return table::Partition(table::Schema(std::move(fields)), std::move(columns));
}

Bytes partition_to_bytes(const table::Partition& p) { return encode_buffers(serialize_partition(p)); }

table::Partition partition_from_bytes(ByteView bytes) { return deserialize_partition(decode_buffers(bytes)); }

}  // namespace punchgrid::wire
