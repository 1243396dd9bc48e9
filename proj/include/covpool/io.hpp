#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "covpool/mat.hpp"

namespace covpool {

// SPM1: magic "SPM1", then rows and cols as u32 little-endian, then
// rows*cols float64 little-endian, row-major.

namespace detail {

inline void put_u32_le(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64_le(std::string& s, double d) {
  const std::uint64_t v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline double get_f64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return std::bit_cast<double>(v);
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace detail

inline void write_spm1(const std::string& path, const Mat& m) {
  std::string buf;
  buf.reserve(12 + 8 * m.a.size());
  buf += "SPM1";
  detail::put_u32_le(buf, static_cast<std::uint32_t>(m.rows));
  detail::put_u32_le(buf, static_cast<std::uint32_t>(m.cols));
  for (double v : m.a) detail::put_f64_le(buf, v);
  detail::write_file(path, buf);
}

inline Mat read_spm1(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  if (buf.size() < 12 || buf.compare(0, 4, "SPM1") != 0)
    throw std::runtime_error("not an SPM1 file: " + path);
  const auto* b = reinterpret_cast<const unsigned char*>(buf.data());
  const std::uint32_t rows = detail::get_u32_le(b + 4);
  const std::uint32_t cols = detail::get_u32_le(b + 8);
  const std::size_t need = 12 + 8 * static_cast<std::size_t>(rows) * cols;
  if (buf.size() != need)
    throw std::runtime_error("SPM1 size mismatch in " + path + ": have " +
                             std::to_string(buf.size()) + " bytes, need " +
                             std::to_string(need));
  Mat m(rows, cols);
  for (std::size_t i = 0; i < m.a.size(); ++i)
    m.a[i] = detail::get_f64_le(b + 12 + 8 * i);
  return m;
}

// 8-bit binary PGM with linear min-max normalization onto [0, 255].
// A constant image maps to all zeros.
inline void write_pgm(const std::string& path, const Mat& m) {
  if (m.rows == 0 || m.cols == 0)
    throw std::invalid_argument("write_pgm: empty image");
  double lo = m.a[0], hi = m.a[0];
  for (double v : m.a) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi - lo;
  std::string buf = "P5\n" + std::to_string(m.cols) + " " +
                    std::to_string(m.rows) + "\n255\n";
  for (double v : m.a) {
    long g = span > 0.0 ? std::lround((v - lo) / span * 255.0) : 0;
    if (g < 0) g = 0;
    if (g > 255) g = 255;
    buf.push_back(static_cast<char>(static_cast<unsigned char>(g)));
  }
  detail::write_file(path, buf);
}

// Shortest round-trip decimal formatting; deterministic for a given value.
inline std::string fmt_num(double v) {
  char tmp[40];
  std::snprintf(tmp, sizeof(tmp), "%.17g", v);
  return tmp;
}

// Minimal CSV writer: one header row, then data rows, '\n' line ends.
class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : f_(path, std::ios::trunc) {
    if (!f_) throw std::runtime_error("cannot open for writing: " + path);
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) f_ << ',';
      f_ << cells[i];
    }
    f_ << '\n';
  }
  ~CsvWriter() { f_.flush(); }

 private:
  std::ofstream f_;
};

}  // namespace covpool
