#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace lamperti {

// Shortest round-trip decimal form, locale independent.
std::string format_number(double v);
std::string format_number(std::int64_t v);
inline std::string format_number(int v) { return format_number(static_cast<std::int64_t>(v)); }
inline std::string format_number(std::uint64_t v) {
  return format_number(static_cast<std::int64_t>(v));
}

double parse_double(std::string_view s);

std::string sha256_hex(std::string_view data);

// Writes to a sibling temp file and renames over the target.
void atomic_write(const std::filesystem::path& path, std::string_view content);

// In-memory CSV document; header comment lines come first, then the column header.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> columns);

  void add_comment(std::string line);
  template <typename... Ts>
  void add_row(const Ts&... values) {
    std::vector<std::string> cells{cell(values)...};
    push(std::move(cells));
  }
  void push(std::vector<std::string> cells);

  std::string str() const;
  std::size_t rows() const { return rows_.size(); }

 private:
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  static std::string cell(bool b) { return b ? "1" : "0"; }
  template <typename T>
  static std::string cell(const T& v) {
    return format_number(v);
  }

  std::vector<std::string> columns_;
  std::vector<std::string> comments_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace lamperti
