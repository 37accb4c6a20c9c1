#pragma once

#include <filesystem>
#include <iosfwd>

#include "punchgrid/table/partition.hpp"

namespace punchgrid::table {

// Fixture format:
//   #schema: key:int64,value:float64,label:utf8
//   key,value,label
//   1,0.5,"a, quoted ""cell"""
// Fields follow RFC 4180 quoting. Doubles are written in shortest
// round-trip form.

void write_csv(std::ostream& out, const Partition& p);
Partition read_csv(std::istream& in);

void write_csv(const std::filesystem::path& path, const Partition& p);
Partition read_csv(const std::filesystem::path& path);

}  // namespace punchgrid::table
