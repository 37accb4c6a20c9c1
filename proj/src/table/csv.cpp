#include "punchgrid/table/csv.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>

#include "punchgrid/error.hpp"

namespace punchgrid::table {

namespace {

constexpr std::string_view kSchemaPrefix = "#schema:";

void write_field(std::ostream& out, std::string_view s) {
  if (!s.empty() && s.find_first_of(",\"\r\n") == std::string_view::npos) {
    out << s;
    return;
  }
  out << '"';
  for (char ch : s) {
    if (ch == '"') out << '"';
    out << ch;
  }
  out << '"';
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// One record, honouring quoted fields that span lines. nullopt at EOF; an
// empty vector for a blank line. Empty strings are always written quoted, so
// a blank line never stands for a row.
std::optional<std::vector<std::string>> read_record(std::istream& in, std::size_t& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  bool any = false;
  bool touched = false;
  char ch;
  while (in.get(ch)) {
    any = true;
    if (ch != '\n' && ch != '\r') touched = true;
    if (quoted) {
      if (ch == '"') {
        if (in.peek() == '"') {
          in.get(ch);
          cur += '"';
        } else {
          quoted = false;
        }
      } else {
        if (ch == '\n') ++line;
        cur += ch;
      }
      continue;
    }
    if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (ch == '\r' && in.peek() == '\n') {
      continue;
    } else if (ch == '\n') {
      ++line;
      if (!touched) return fields;
      fields.push_back(std::move(cur));
      return fields;
    } else {
      cur += ch;
    }
  }
  if (quoted) fail(ErrorCode::Io, "unterminated quoted field at line " + std::to_string(line));
  if (!any) return std::nullopt;
  if (!touched) return fields;
  fields.push_back(std::move(cur));
  return fields;
}

TypeTag parse_tag(std::string_view s) {
  if (s == "int64") return TypeTag::Int64;
  if (s == "float64") return TypeTag::Float64;
  if (s == "utf8") return TypeTag::Utf8;
  fail(ErrorCode::UnsupportedType, "csv schema type '" + std::string(s) + "'");
}

template <class T>
T parse_number(const std::string& s, std::size_t line) {
  T v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    fail(ErrorCode::Io, "bad number '" + s + "' at line " + std::to_string(line));
  }
  return v;
}

}  // namespace

void write_csv(std::ostream& out, const Partition& p) {
  const auto& schema = p.schema();
  out << kSchemaPrefix << ' ';
  for (std::size_t c = 0; c < schema.size(); ++c) {
    if (c) out << ',';
    out << schema[c].name << ':' << to_string(schema[c].type);
  }
  out << '\n';
  for (std::size_t c = 0; c < schema.size(); ++c) {
    if (c) out << ',';
    write_field(out, schema[c].name);
  }
  out << '\n';
  for (std::size_t r = 0; r < p.num_rows(); ++r) {
    for (std::size_t c = 0; c < p.num_columns(); ++c) {
      if (c) out << ',';
      std::visit(
          [&](const auto& col) {
            using T = std::decay_t<decltype(col)>;
            if constexpr (std::is_same_v<T, Int64Column>) {
              out << col[r];
            } else if constexpr (std::is_same_v<T, Float64Column>) {
              out << format_double(col[r]);
            } else {
              write_field(out, col[r]);
            }
          },
          p.column(c));
    }
    out << '\n';
  }
}

Partition read_csv(std::istream& in) {
  std::string first;
  if (!std::getline(in, first) || first.rfind(kSchemaPrefix, 0) != 0) {
    fail(ErrorCode::MalformedSchemaBlock, "csv must start with a '#schema:' line");
  }
  std::size_t line = 2;
  std::vector<Field> fields;
  std::string_view spec(first);
  spec.remove_prefix(kSchemaPrefix.size());
  while (!spec.empty() && (spec.front() == ' ' || spec.back() == '\r')) {
    if (spec.front() == ' ') spec.remove_prefix(1);
    else spec.remove_suffix(1);
  }
  while (!spec.empty()) {
    const auto comma = spec.find(',');
    const auto item = spec.substr(0, comma);
    const auto colon = item.rfind(':');
    if (colon == std::string_view::npos) fail(ErrorCode::MalformedSchemaBlock, "schema entry without a type");
    fields.push_back(Field{std::string(item.substr(0, colon)), parse_tag(item.substr(colon + 1))});
    if (comma == std::string_view::npos) break;
    spec.remove_prefix(comma + 1);
  }
  Schema schema(std::move(fields));

  auto header = read_record(in, line);
  if (!header || header->size() != schema.size()) fail(ErrorCode::SchemaMismatch, "csv header width differs from schema");
  for (std::size_t c = 0; c < schema.size(); ++c) {
    if ((*header)[c] != schema[c].name) {
      fail(ErrorCode::SchemaMismatch, "csv header '" + (*header)[c] + "' differs from schema name '" + schema[c].name + "'");
    }
  }

  std::vector<Column> cols;
  for (const auto& f : schema.fields()) cols.push_back(empty_column(f.type));
  while (auto rec = read_record(in, line)) {
    if (rec->empty()) continue;
    if (rec->size() != schema.size()) {
      fail(ErrorCode::LengthMismatch, "csv record with " + std::to_string(rec->size()) + " fields near line " +
                                          std::to_string(line));
    }
    for (std::size_t c = 0; c < cols.size(); ++c) {
      std::visit(
          [&](auto& col) {
            using T = std::decay_t<decltype(col)>;
            if constexpr (std::is_same_v<T, Int64Column>) {
              col.push_back(parse_number<std::int64_t>((*rec)[c], line));
            } else if constexpr (std::is_same_v<T, Float64Column>) {
              col.push_back(parse_number<double>((*rec)[c], line));
            } else {
              col.push_back(std::move((*rec)[c]));
            }
          },
          cols[c]);
    }
  }
  return Partition(std::move(schema), std::move(cols));
}

void write_csv(const std::filesystem::path& path, const Partition& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  write_csv(out, p);
  if (!out) fail(ErrorCode::Io, "write failed for " + path.string());
}

Partition read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot read " + path.string());
  return read_csv(in);
}

}  // namespace punchgrid::table
