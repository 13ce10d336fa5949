#pragma once

#include <string>
#include <vector>

#include "cpflow/array.hpp"

namespace cpflow {

// Parses comma-separated 64-bit reals into a [n, d] array. With `has_header`
// the first line is skipped and fixes d by its field count, so a file with a
// header and no data rows loads as [0, d]. Ragged rows, non-numeric fields,
// and headerless files with no rows raise ParseError naming the 1-based line.
ArrayValue load_csv(const std::string& path, bool has_header);

// Same grammar on an in-memory string; `source` names the input in errors.
ArrayValue parse_csv_text(const std::string& text, bool has_header,
                          const std::string& source);

// One CSV row with enough digits that load_csv recovers each double exactly.
std::string csv_row(const double* vals, long n);

// Header line plus one row per array row, written atomically enough for our
// purposes (single fstream, throws ParseError naming the path on I/O failure).
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const ArrayValue& rows);

}  // namespace cpflow
