#pragma once

// Minimal CSV emission: comma-separated, header row, doubles printed with
// 17 significant digits so they round-trip exactly.

#include <cstdint>
#include <cstdio>
#include <initializer_list>
#include <ostream>
#include <string>
#include <vector>

namespace cdiff {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt_hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

class CsvField {
 public:
  CsvField(double v) : s_(fmt_double(v)) {}
  CsvField(int v) : s_(std::to_string(v)) {}
  CsvField(long v) : s_(std::to_string(v)) {}
  CsvField(long long v) : s_(std::to_string(v)) {}
  CsvField(unsigned v) : s_(std::to_string(v)) {}
  CsvField(unsigned long v) : s_(std::to_string(v)) {}
  CsvField(unsigned long long v) : s_(std::to_string(v)) {}
  CsvField(std::string v) : s_(std::move(v)) {}
  CsvField(const char* v) : s_(v) {}
  const std::string& str() const { return s_; }

 private:
  std::string s_;
};

class CsvWriter {
 public:
  CsvWriter(std::ostream& os, const std::vector<std::string>& header) : os_(os), cols_(header.size()) {
    write_line(header);
  }

  void row(std::initializer_list<CsvField> fields) { row(std::vector<CsvField>(fields)); }

  void row(const std::vector<CsvField>& fields) {
    std::vector<std::string> s;
    s.reserve(fields.size());
    for (const auto& f : fields) s.push_back(f.str());
    write_line(s);
  }

  std::size_t columns() const { return cols_; }

 private:
  void write_line(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) os_ << ',';
      os_ << cells[i];
    }
    os_ << '\n';
  }

  std::ostream& os_;
  std::size_t cols_;
};

}  // namespace cdiff
