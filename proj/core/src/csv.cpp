#include "cpflow/csv.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cpflow/errors.hpp"

namespace cpflow {

namespace {

// Trims ASCII spaces and tabs; CR is handled by the line splitter.
std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return out;
}

double parse_field(const std::string& field, const std::string& source, long line_no) {
  if (field.empty()) {
    throw ParseError(source + ": line " + std::to_string(line_no) + ": empty field");
  }
  const char* begin = field.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end != begin + field.size()) {
    throw ParseError(source + ": line " + std::to_string(line_no) + ": non-numeric field '" +
                     field + "'");
  }
  return v;
}

}  // namespace

ArrayValue parse_csv_text(const std::string& text, bool has_header,
                          const std::string& source) {
  // Split once, strip CR, and drop the blank tail a trailing newline leaves.
  std::vector<std::string> lines;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t nl = text.find('\n', pos);
    size_t end = nl == std::string::npos ? text.size() : nl;
    std::string line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    pos = nl == std::string::npos ? text.size() : nl + 1;
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();

  std::vector<double> data;
  long d = -1;
  long n = 0;
  for (size_t idx = 0; idx < lines.size(); ++idx) {
    const long line_no = static_cast<long>(idx) + 1;
    if (trim(lines[idx]).empty()) {
      throw ParseError(source + ": line " + std::to_string(line_no) + ": blank line");
    }
    std::vector<std::string> fields = split_fields(lines[idx]);
    if (has_header && idx == 0) {
      d = static_cast<long>(fields.size());
      continue;
    }
    if (d < 0) d = static_cast<long>(fields.size());
    if (static_cast<long>(fields.size()) != d) {
      throw ParseError(source + ": line " + std::to_string(line_no) + ": expected " +
                       std::to_string(d) + " fields, got " + std::to_string(fields.size()));
    }
    for (const std::string& f : fields) data.push_back(parse_field(f, source, line_no));
    ++n;
  }
  if (d < 0) {
    throw ParseError(source + ": empty input");
  }
  return ArrayValue::from({n, d}, std::move(data));
}

ArrayValue load_csv(const std::string& path, bool has_header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ParseError(path + ": cannot open file");
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv_text(buf.str(), has_header, path);
}

std::string csv_row(const double* vals, long n) {
  std::string out;
  char buf[40];
  for (long j = 0; j < n; ++j) {
    std::snprintf(buf, sizeof(buf), "%.17g", vals[j]);
    if (j) out += ',';
    out += buf;
  }
  return out;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const ArrayValue& rows) {
  if (rows.rank() != 2) {
    throw ContractError("write_csv: rows must be rank 2");
  }
  if (static_cast<long>(header.size()) != rows.cols()) {
    throw ContractError("write_csv: header width does not match data");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw ParseError(path + ": cannot open file for writing");
  }
  for (size_t j = 0; j < header.size(); ++j) {
    if (j) out << ',';
    out << header[j];
  }
  out << '\n';
  const long d = rows.cols();
  for (long i = 0; i < rows.rows(); ++i) {
    out << csv_row(rows.data() + i * d, d) << '\n';
  }
  out.flush();
  if (!out) {
    throw ParseError(path + ": write failed");
  }
}

}  // namespace cpflow
