#pragma once

// Minimal CSV helpers: comma separated, optional double quotes, '.' decimal
// point. Numbers are written in shortest round-trip form.

#include <charconv>
#include <cstddef>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "tictac/error.hpp"
#include "tictac/matrix.hpp"

namespace tictac::csv {

inline std::vector<std::string> split_line(std::string_view line, char delim = ',') {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  if (quoted) throw Error(ErrorCode::MalformedCsv, "unterminated quote");
  out.push_back(std::move(cur));
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

/// Parses a finite double; nullopt for anything else (including "nan").
inline std::optional<double> parse_number(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

inline void write_row(std::ostream& os, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) os << ',';
    os << format_number(values[i]);
  }
  os << '\n';
}

inline void write_matrix(std::ostream& os, const Matrix& m, const std::vector<std::string>& header = {}) {
  if (!header.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << '\n';
  }
  for (std::size_t r = 0; r < m.rows(); ++r) write_row(os, m.row(r));
}

/// Numeric blocks of a file: consecutive non-empty lines form one block,
/// blocks are separated by blank lines. A first line that does not parse as
/// numbers is taken as a header and skipped.
inline std::vector<Matrix> read_numeric_blocks(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::vector<Matrix> blocks;
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  std::size_t lineno = 0;
  auto flush = [&] {
    if (rows.empty()) return;
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != m.cols())
        throw Error(ErrorCode::MalformedCsv, path + ": ragged rows in block " + std::to_string(blocks.size()));
      for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) = rows[r][c];
    }
    blocks.push_back(std::move(m));
    rows.clear();
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) {
      flush();
      continue;
    }
    const auto fields = split_line(line);
    std::vector<double> row;
    row.reserve(fields.size());
    bool numeric = true;
    for (const auto& f : fields) {
      const auto v = parse_number(f);
      if (!v) {
        numeric = false;
        break;
      }
      row.push_back(*v);
    }
    if (!numeric) {
      if (first) {
        first = false;
        continue;
      }
      throw Error(ErrorCode::MalformedCsv, path + ":" + std::to_string(lineno) + ": non-numeric field");
    }
    first = false;
    rows.push_back(std::move(row));
  }
  flush();
  return blocks;
}

/// All rows of a file as one matrix (blank lines ignored).
inline Matrix read_numeric_table(const std::string& path) {
  const auto blocks = read_numeric_blocks(path);
  std::size_t total = 0;
  for (const auto& b : blocks) total += b.rows();
  if (total == 0) throw Error(ErrorCode::MalformedCsv, path + ": no numeric rows");
  Matrix m(total, blocks.front().cols());
  std::size_t r = 0;
  for (const auto& b : blocks) {
    if (b.cols() != m.cols()) throw Error(ErrorCode::MalformedCsv, path + ": ragged rows");
    for (std::size_t i = 0; i < b.rows(); ++i, ++r)
      for (std::size_t c = 0; c < b.cols(); ++c) m(r, c) = b(i, c);
  }
  return m;
}

}  // namespace tictac::csv
