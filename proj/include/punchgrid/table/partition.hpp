#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace punchgrid::table {

enum class TypeTag : std::uint8_t { Int64 = 0, Float64 = 1, Utf8 = 2 };

std::string_view to_string(TypeTag tag);

struct Field {
  std::string name;
  TypeTag type;

  friend bool operator==(const Field&, const Field&) = default;
};

/// Ordered column descriptors. Names are unique and the list is non-empty.
class Schema {
 public:
  Schema() = default;
  explicit Schema(std::vector<Field> fields);

  const std::vector<Field>& fields() const { return fields_; }
  std::size_t size() const { return fields_.size(); }
  const Field& operator[](std::size_t i) const { return fields_[i]; }
  bool contains(std::string_view name) const;

  friend bool operator==(const Schema&, const Schema&) = default;

 private:
  std::vector<Field> fields_;
};

using Int64Column = std::vector<std::int64_t>;
using Float64Column = std::vector<double>;
using Utf8Column = std::vector<std::string>;
using Column = std::variant<Int64Column, Float64Column, Utf8Column>;

TypeTag type_of(const Column& c);
std::size_t column_length(const Column& c);
Column empty_column(TypeTag tag);

/// Doubles compare by bit pattern so NaN payloads survive equality checks.
bool columns_equal(const Column& a, const Column& b);

/// One shard of a distributed table: a schema plus equal-length columns.
/// Immutable once constructed.
class Partition {
 public:
  Partition() = default;
  Partition(Schema schema, std::vector<Column> columns);

  static Partition empty(Schema schema);

  const Schema& schema() const { return schema_; }
  const std::vector<Column>& columns() const { return columns_; }
  const Column& column(std::size_t i) const { return columns_[i]; }
  std::size_t num_rows() const { return rows_; }
  std::size_t num_columns() const { return columns_.size(); }

  const Int64Column& int64(std::size_t i) const { return std::get<Int64Column>(columns_[i]); }

  /// Rows selected by index, in the given order.
  Partition take(const std::vector<std::size_t>& rows) const;

  friend bool operator==(const Partition& a, const Partition& b);

 private:
  Schema schema_;
  std::vector<Column> columns_;
  std::size_t rows_ = 0;
};

}  // namespace punchgrid::table
