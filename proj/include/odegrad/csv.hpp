#pragma once

#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include "odegrad/errors.hpp"

namespace odegrad {
namespace csv {

// 17 significant digits round-trips a double exactly.
inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string fmt(long v) { return std::to_string(v); }
inline std::string fmt(int v) { return std::to_string(v); }

inline std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

}  // namespace csv

// RFC-4180 writer: header row, CRLF line endings, '.' decimal separator.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : width_(header.size()) {
    append_row(header);
  }

  void row(const std::vector<std::string>& cells) {
    if (cells.size() != width_)
      throw Error(ErrorKind::InvalidArgument, "csv row width mismatch");
    append_row(cells);
  }

  const std::string& str() const { return body_; }

  void write_file(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::InvalidArgument, "cannot open " + path + " for writing");
    out << body_;
  }

 private:
  void append_row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) body_ += ',';
      body_ += csv::quote_if_needed(cells[i]);
    }
    body_ += "\r\n";
  }

  std::size_t width_;
  std::string body_;
};

}  // namespace odegrad
