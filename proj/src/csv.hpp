#pragma once

// Minimal comma-separated files: a header row, no quoting, atomic writes.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace daan::csv {

inline std::string format(double v, int significant_digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", significant_digits, v);
  return buf;
}

inline double parse_number(const std::string& cell, std::size_t line,
                           const std::string& path) {
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (cell.empty() || end != cell.c_str() + cell.size()) {
    throw std::runtime_error(path + ": row " + std::to_string(line) +
                             ": '" + cell + "' is not a number");
  }
  return v;
}

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// Reads a file whose every row has as many cells as the header. Row
/// numbers in errors are 1-based file lines.
inline Table read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  Table t;
  std::string line;
  if (!std::getline(in, line) || line.empty()) {
    throw std::runtime_error(path + ": empty file");
  }
  if (line.back() == '\r') line.pop_back();
  t.header = split(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.header.size()) {
      throw std::runtime_error(path + ": row " + std::to_string(lineno) +
                               ": expected " +
                               std::to_string(t.header.size()) +
                               " fields, got " + std::to_string(cells.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

/// Buffers rows and publishes the file with write-temp-then-rename.
class Writer {
 public:
  Writer(std::string path, const std::vector<std::string>& header)
      : path_(std::move(path)) {
    row(header);
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) buf_ << ',';
      buf_ << cells[i];
    }
    buf_ << '\n';
  }

  void commit() {
    const std::string tmp = path_ + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw std::runtime_error("cannot open " + tmp + " for writing");
      out << buf_.str();
      if (!out) throw std::runtime_error("failed writing " + tmp);
    }
    std::filesystem::rename(tmp, path_);
  }

 private:
  std::string path_;
  std::ostringstream buf_;
};

}  // namespace daan::csv
