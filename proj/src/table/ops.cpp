#include "punchgrid/table/ops.hpp"

#include <algorithm>
#include <numeric>

#include "punchgrid/error.hpp"

namespace punchgrid::table {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

const Int64Column& key_column(const Partition& p, std::size_t key_col, const char* side) {
  if (key_col >= p.num_columns()) {
    fail(ErrorCode::InvalidArgument, std::string(side) + " key column " + std::to_string(key_col) + " out of range");
  }
  if (p.schema()[key_col].type != TypeTag::Int64) {
    fail(ErrorCode::UnsupportedKeyType, std::string(side) + " key column '" + p.schema()[key_col].name + "' is " +
                                            std::string(to_string(p.schema()[key_col].type)));
  }
  return p.int64(key_col);
}

std::vector<std::size_t> sorted_by_key(const Int64Column& keys) {
  std::vector<std::size_t> idx(keys.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  return idx;
}

}  // namespace

std::uint64_t fnv1a64(ByteView data) {
  std::uint64_t h = kFnvOffset;
  for (auto b : data) {
    h ^= b;
    h *= kFnvPrime;
  }
  return h;
}

std::uint64_t fnv1a64(std::int64_t key) {
  Bytes le;
  le.reserve(8);
  put_le(le, key);
  return fnv1a64(ByteView(le));
}

std::vector<Partition> hash_partition(const Partition& p, std::size_t key_col, std::uint32_t buckets) {
  if (buckets == 0) fail(ErrorCode::InvalidArgument, "hash_partition needs at least one bucket");
  const auto& keys = key_column(p, key_col, "partition");
  std::vector<std::vector<std::size_t>> rows(buckets);
  for (std::size_t r = 0; r < keys.size(); ++r) rows[bucket_of(keys[r], buckets)].push_back(r);
  std::vector<Partition> out;
  out.reserve(buckets);
  for (const auto& sel : rows) out.push_back(p.take(sel));
  return out;
}

Partition local_join(const Partition& left, const Partition& right, std::size_t key_col) {
  const auto& lk = key_column(left, key_col, "left");
  const auto& rk = key_column(right, key_col, "right");

  std::vector<Field> fields = left.schema().fields();
  std::vector<std::size_t> right_cols;
  for (std::size_t i = 0; i < right.num_columns(); ++i) {
    if (i == key_col) continue;
    Field f = right.schema()[i];
    const bool taken = std::any_of(fields.begin(), fields.end(), [&](const Field& g) { return g.name == f.name; });
    if (taken) f.name += "_r";
    fields.push_back(std::move(f));
    right_cols.push_back(i);
  }
  Schema schema(std::move(fields));  // throws SchemaNameCollision if "_r" did not resolve it

  const auto li = sorted_by_key(lk);
  const auto ri = sorted_by_key(rk);
  std::vector<std::size_t> lrows;
  std::vector<std::size_t> rrows;
  std::size_t a = 0;
  std::size_t b = 0;
  while (a < li.size() && b < ri.size()) {
    const auto ka = lk[li[a]];
    const auto kb = rk[ri[b]];
    if (ka < kb) {
      ++a;
    } else if (kb < ka) {
      ++b;
    } else {
      auto a_end = a;
      while (a_end < li.size() && lk[li[a_end]] == ka) ++a_end;
      auto b_end = b;
      while (b_end < ri.size() && rk[ri[b_end]] == ka) ++b_end;
      for (auto x = a; x < a_end; ++x) {
        for (auto y = b; y < b_end; ++y) {
          lrows.push_back(li[x]);
          rrows.push_back(ri[y]);
        }
      }
      a = a_end;
      b = b_end;
    }
  }

  auto lpart = left.take(lrows);
  auto rpart = right.take(rrows);
  std::vector<Column> cols = lpart.columns();
  for (auto i : right_cols) cols.push_back(rpart.column(i));
  return Partition(std::move(schema), std::move(cols));
}

Partition concat(const std::vector<Partition>& parts) {
  if (parts.empty()) fail(ErrorCode::InvalidArgument, "concat of no partitions");
  const auto& schema = parts.front().schema();
  std::vector<Column> cols;
  for (const auto& f : schema.fields()) cols.push_back(empty_column(f.type));
  for (std::size_t p = 0; p < parts.size(); ++p) {
    if (parts[p].schema() != schema) {
      fail(ErrorCode::SchemaMismatch, "partition " + std::to_string(p) + " schema differs from partition 0");
    }
    for (std::size_t c = 0; c < cols.size(); ++c) {
      std::visit(
          [&](auto& dst) {
            const auto& src = std::get<std::decay_t<decltype(dst)>>(parts[p].column(c));
            dst.insert(dst.end(), src.begin(), src.end());
          },
          cols[c]);
    }
  }
  return Partition(schema, std::move(cols));
}

}  // namespace punchgrid::table
