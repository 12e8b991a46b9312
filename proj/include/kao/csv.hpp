#pragma once

// Minimal CSV I/O for numeric tables: comma-separated, one header row,
// doubles written with 17 significant digits so a reload is bit-exact.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "kao/types.hpp"

namespace kao {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string format_double(double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

inline double parse_double(std::string_view s, const std::string& where) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw IoError(where + ": cannot parse number '" + std::string(s) + "'");
  }
  return v;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    std::string_view cell = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.remove_suffix(1);
    while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
    out.emplace_back(cell);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Text table with named columns; numeric() parses one column on demand, so
/// long-format files with string columns (e.g. a rule name) can be read.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> text;  // raw cells, row-major

  [[nodiscard]] std::size_t rows() const { return text.size(); }

  [[nodiscard]] std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw IoError("missing column '" + name + "'");
  }

  [[nodiscard]] bool has(const std::string& name) const {
    for (const auto& h : header)
      if (h == name) return true;
    return false;
  }

  [[nodiscard]] Vector numeric(const std::string& name) const {
    const auto c = index_of(name);
    Vector v(static_cast<Eigen::Index>(rows()));
    for (std::size_t r = 0; r < rows(); ++r) {
      v(static_cast<Eigen::Index>(r)) = parse_double(text[r][c], "column '" + name + "' row " + std::to_string(r + 2));
    }
    return v;
  }

  [[nodiscard]] const std::string& cell(std::size_t r, const std::string& name) const { return text[r][index_of(name)]; }
};

inline Table read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw IoError("'" + path.string() + "' is empty (expected a header row)");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  t.header = split_csv_line(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    if (cells.size() != t.header.size()) {
      throw IoError("'" + path.string() + "' line " + std::to_string(lineno) + ": expected " +
                    std::to_string(t.header.size()) + " fields, got " + std::to_string(cells.size()));
    }
    t.text.push_back(std::move(cells));
  }
  return t;
}

/// Streaming writer; throws IoError with the path on failure.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header) : path_(path), out_(path) {
    if (!out_) throw IoError("cannot open '" + path.string() + "' for writing");
    row(header);
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) buf_ += ',';
      buf_ += cells[i];
    }
    buf_ += '\n';
    if (buf_.size() > (1U << 16)) flush();
  }

  void close() {
    flush();
    out_.close();
    if (!out_) throw IoError("write failed for '" + path_.string() + "'");
  }

  ~CsvWriter() {
    if (out_.is_open()) {
      out_ << buf_;
    }
  }

 private:
  void flush() {
    out_ << buf_;
    buf_.clear();
    if (!out_) throw IoError("write failed for '" + path_.string() + "'");
  }

  std::filesystem::path path_;
  std::ofstream out_;
  std::string buf_;
};

/// Writes named numeric columns of equal length.
inline void write_columns(const std::filesystem::path& path, const std::vector<std::string>& names,
                          const std::vector<const Vector*>& cols) {
  require(names.size() == cols.size() && !cols.empty(), "write_columns: names/columns mismatch");
  const auto n = cols.front()->size();
  for (const auto* c : cols) require_dim(c->size(), n, "write_columns column length");
  CsvWriter w(path, names);
  std::vector<std::string> cells(cols.size());
  for (Eigen::Index r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) cells[c] = format_double((*cols[c])(r));
    w.row(cells);
  }
  w.close();
}

/// Min-max scales each column to [0, 1]. Constant columns map to 0.
inline Design normalize_min_max(const Design& x) {
  Design out = x;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double lo = x.col(j).minCoeff();
    const double span = x.col(j).maxCoeff() - lo;
    out.col(j).array() -= lo;
    if (span > 0.0) out.col(j) /= span;
  }
  return out;
}

}  // namespace kao
