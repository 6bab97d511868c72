#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "cvqr/structural.hpp"

namespace cvqr {

/// Long-format table with columns x,index,value,lo,hi,kind; one row per
/// (x, index) cell. The ASF index and absent band fields are written empty.
/// Numbers use the shortest form that re-reads exactly. Lines starting
/// with '#' are comments; `header` lines are written as comments first.
void write_structural_csv(std::ostream& out, const std::vector<const StructuralFunctionEstimate*>& estimates,
                          const std::vector<std::string>& header = {});

/// Inverse of write_structural_csv, one estimate per kind in order of first
/// appearance. A "# band_level: <value>" comment sets the band level.
std::vector<StructuralFunctionEstimate> read_structural_csv(std::istream& in);
std::vector<StructuralFunctionEstimate> read_structural_csv(const std::string& path);

/// Writes through `<path>.partial` and renames on success.
void write_file_atomically(const std::string& path, const std::string& contents);

std::string format_number(double value);

}  // namespace cvqr
