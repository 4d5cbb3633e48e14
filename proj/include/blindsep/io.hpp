#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "blindsep/types.hpp"

namespace blindsep {

// Shortest text form that parses back to the same bits.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc{} || res.ptr != end)
    throw io_error("bad number cell: '" + std::string(s) + "'");
  return v;
}

// Complex cell format "re+imi" / "re-imi", e.g. 1.5+0.25i.
inline std::string format_complex(cxd v) {
  std::string im = format_double(v.imag());
  std::string out = format_double(v.real());
  if (im.empty() || im[0] != '-') out += '+';
  out += im;
  out += 'i';
  return out;
}

inline cxd parse_complex(std::string_view s) {
  const char* end = s.data() + s.size();
  double re = 0.0;
  auto res = std::from_chars(s.data(), end, re);
  if (res.ec != std::errc{} || res.ptr == end)
    throw io_error("bad complex cell: '" + std::string(s) + "'");
  const char* p = res.ptr;
  if (*p == '+') ++p;  // from_chars already accepts a leading '-'
  double im = 0.0;
  res = std::from_chars(p, end, im);
  if (res.ec != std::errc{} || res.ptr + 1 != end || *res.ptr != 'i')
    throw io_error("bad complex cell: '" + std::string(s) + "'");
  return cxd(re, im);
}

inline void write_text_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw io_error("write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open for reading: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

namespace detail {

inline std::vector<std::vector<std::string>> split_csv(const std::string& text,
                                                       const std::string& origin) {
  std::vector<std::vector<std::string>> rows;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::vector<std::string> cells;
    std::size_t cell = pos;
    while (cell <= eol) {
      std::size_t comma = text.find(',', cell);
      if (comma == std::string::npos || comma > eol) comma = eol;
      cells.emplace_back(text.substr(cell, comma - cell));
      cell = comma + 1;
    }
    rows.push_back(std::move(cells));
    pos = eol + 1;
  }
  for (const auto& r : rows)
    if (r.size() != rows.front().size())
      throw io_error("ragged csv rows in " + origin);
  return rows;
}

template <typename Matrix, typename Format>
void write_cells(const std::filesystem::path& path, const Matrix& m, Format format) {
  std::string out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out += ',';
      out += format(m(i, j));
    }
    out += '\n';
  }
  write_text_file(path, out);
}

template <typename Matrix, typename Parse>
Matrix read_cells(const std::filesystem::path& path, Parse parse) {
  const auto rows = split_csv(read_text_file(path), path.string());
  if (rows.empty()) return Matrix(0, 0);
  Matrix m(static_cast<Eigen::Index>(rows.size()),
           static_cast<Eigen::Index>(rows.front().size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      m(i, j) = parse(rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
  return m;
}

}  // namespace detail

inline void write_matrix_csv(const std::filesystem::path& path, const CMatrix& m) {
  detail::write_cells(path, m, [](cxd v) { return format_complex(v); });
}

inline void write_matrix_csv(const std::filesystem::path& path, const RMatrix& m) {
  detail::write_cells(path, m, [](double v) { return format_double(v); });
}

inline void write_states_csv(const std::filesystem::path& path, const ActivationMatrix& s) {
  detail::write_cells(path, s,
                      [](std::uint8_t v) { return std::string(1, v ? '1' : '0'); });
}

inline CMatrix read_complex_csv(const std::filesystem::path& path) {
  return detail::read_cells<CMatrix>(
      path, [](const std::string& c) { return parse_complex(c); });
}

inline RMatrix read_real_csv(const std::filesystem::path& path) {
  return detail::read_cells<RMatrix>(
      path, [](const std::string& c) { return parse_double(c); });
}

inline ActivationMatrix read_states_csv(const std::filesystem::path& path) {
  return detail::read_cells<ActivationMatrix>(path, [&](const std::string& c) {
    if (c == "0") return std::uint8_t{0};
    if (c == "1") return std::uint8_t{1};
    throw io_error("bad state cell '" + c + "' in " + path.string());
  });
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline void write_table_csv(const std::filesystem::path& path, const CsvTable& table) {
  auto join = [&](const std::vector<std::string>& cells) {
    if (cells.size() != table.header.size())
      throw io_error("table row width mismatch for " + path.string());
    std::string line;
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (cells[k].find_first_of(",\n\"") != std::string::npos)
        throw io_error("table cell contains a delimiter: '" + cells[k] + "'");
      if (k > 0) line += ',';
      line += cells[k];
    }
    line += '\n';
    return line;
  };
  std::string out = join(table.header);
  for (const auto& row : table.rows) out += join(row);
  write_text_file(path, out);
}

inline CsvTable read_table_csv(const std::filesystem::path& path) {
  const auto rows = detail::split_csv(read_text_file(path), path.string());
  if (rows.empty()) throw io_error("table has no header: " + path.string());
  CsvTable table;
  table.header = rows.front();
  table.rows.assign(rows.begin() + 1, rows.end());
  return table;
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  const auto res = std::to_chars(buf, buf + sizeof buf, h, 16);
  std::string digits(buf, res.ptr);
  return std::string(16 - digits.size(), '0') + digits;
}

inline std::uint64_t file_checksum(const std::filesystem::path& path) {
  return fnv1a64(read_text_file(path));
}

}  // namespace blindsep
