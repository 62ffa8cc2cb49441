#pragma once

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "synthctl/errors.hpp"

namespace synthctl::csv {

struct Row {
  std::vector<std::string> fields;
  int line = 0;  // 1-based physical line in the file
};

inline std::string trim(std::string_view s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  size_t e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

/// Reads all data rows of a CSV file. Lines starting with '#' are comments
/// (synthctl output files carry a provenance comment on line one).
inline std::vector<Row> read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open file: " + path);
  std::vector<Row> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    rows.push_back(Row{split_line(line), lineno});
  }
  return rows;
}

/// Parses a numeric field; empty string means missing.
inline std::optional<double> parse_value(const std::string& s, int line) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw ParseError("malformed number '" + s + "' at line " + std::to_string(line));
  return v;
}

inline long parse_int(const std::string& s, int line) {
  long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw ParseError("malformed integer '" + s + "' at line " + std::to_string(line));
  return v;
}

/// Shortest round-trip decimal form, so rerunning a pipeline is byte-stable
/// and re-ingesting an emitted panel loses nothing.
inline std::string format_double(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

}  // namespace synthctl::csv
