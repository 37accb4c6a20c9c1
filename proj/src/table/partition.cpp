#include "punchgrid/table/partition.hpp"

#include <cstring>
#include <unordered_set>

#include "punchgrid/error.hpp"

namespace punchgrid::table {

std::string_view to_string(TypeTag tag) {
  switch (tag) {
    case TypeTag::Int64: return "int64";
    case TypeTag::Float64: return "float64";
    case TypeTag::Utf8: return "utf8";
  }
  return "?";
}

Schema::Schema(std::vector<Field> fields) : fields_(std::move(fields)) {
  if (fields_.empty()) fail(ErrorCode::InvalidArgument, "schema must have at least one column");
  std::unordered_set<std::string_view> seen;
  for (const auto& f : fields_) {
    if (!seen.insert(f.name).second) fail(ErrorCode::SchemaNameCollision, "duplicate column name '" + f.name + "'");
  }
}

bool Schema::contains(std::string_view name) const {
  for (const auto& f : fields_) {
    if (f.name == name) return true;
  }
  return false;
}

TypeTag type_of(const Column& c) { return static_cast<TypeTag>(c.index()); }

std::size_t column_length(const Column& c) {
  return std::visit([](const auto& v) { return v.size(); }, c);
}

Column empty_column(TypeTag tag) {
  switch (tag) {
    case TypeTag::Int64: return Int64Column{};
    case TypeTag::Float64: return Float64Column{};
    case TypeTag::Utf8: return Utf8Column{};
  }
  fail(ErrorCode::UnsupportedType, "type tag " + std::to_string(static_cast<int>(tag)));
}

bool columns_equal(const Column& a, const Column& b) {
  if (a.index() != b.index()) return false;
  if (const auto* fa = std::get_if<Float64Column>(&a)) {
    const auto& fb = std::get<Float64Column>(b);
    return fa->size() == fb.size() && (fa->empty() || std::memcmp(fa->data(), fb.data(), fa->size() * 8) == 0);
  }
  return a == b;
}

Partition::Partition(Schema schema, std::vector<Column> columns)
    : schema_(std::move(schema)), columns_(std::move(columns)) {
  if (columns_.size() != schema_.size()) {
    fail(ErrorCode::SchemaMismatch, std::to_string(columns_.size()) + " columns for a schema of " +
                                        std::to_string(schema_.size()));
  }
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (type_of(columns_[i]) != schema_[i].type) {
      fail(ErrorCode::SchemaMismatch, "column '" + schema_[i].name + "' type differs from schema");
    }
    const auto n = column_length(columns_[i]);
    if (i == 0) {
      rows_ = n;
    } else if (n != rows_) {
      fail(ErrorCode::LengthMismatch, "column '" + schema_[i].name + "' has " + std::to_string(n) +
                                          " rows, expected " + std::to_string(rows_));
    }
  }
}

Partition Partition::empty(Schema schema) {
  std::vector<Column> cols;
  for (const auto& f : schema.fields()) cols.push_back(empty_column(f.type));
  return Partition(std::move(schema), std::move(cols));
}

Partition Partition::take(const std::vector<std::size_t>& rows) const {
  std::vector<Column> out;
  out.reserve(columns_.size());
  for (const auto& c : columns_) {
    out.push_back(std::visit(
        [&](const auto& src) -> Column {
          std::decay_t<decltype(src)> dst;
          dst.reserve(rows.size());
          for (auto r : rows) dst.push_back(src[r]);
          return dst;
        },
        c));
  }
  return Partition(schema_, std::move(out));
}

bool operator==(const Partition& a, const Partition& b) {
  if (a.schema_ != b.schema_ || a.rows_ != b.rows_) return false;
  for (std::size_t i = 0; i < a.columns_.size(); ++i) {
    if (!columns_equal(a.columns_[i], b.columns_[i])) return false;
  }
  return true;
}

}  // namespace punchgrid::table
