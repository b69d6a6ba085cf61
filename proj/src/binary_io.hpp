#pragma once

// Little-endian primitives shared by the weight and dataset file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>

#include "nopf/errors.hpp"

namespace nopf::detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

inline void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline void write_f64s(std::ostream& os, std::span<const double> v) {
  for (double x : v) write_f64(os, x);
}

inline void read_exact(std::istream& is, char* dst, std::size_t n, const std::string& what) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw FormatError(ErrorKind::truncated, "file truncated while reading " + what);
  }
}

inline std::uint64_t read_u64(std::istream& is, const std::string& what) {
  unsigned char buf[8];
  read_exact(is, reinterpret_cast<char*>(buf), 8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

inline double read_f64(std::istream& is, const std::string& what) { return std::bit_cast<double>(read_u64(is, what)); }

inline void read_f64s(std::istream& is, std::span<double> out, const std::string& what) {
  for (double& x : out) x = read_f64(is, what);
}

inline void expect_magic(std::istream& is, const std::string& magic, const std::string& path) {
  std::string got(magic.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(magic.size()));
  if (static_cast<std::size_t>(is.gcount()) != magic.size() || got != magic) {
    throw FormatError(ErrorKind::bad_magic, path + ": missing magic '" + magic + "' (wrong file type or version)");
  }
}

}  // namespace nopf::detail
