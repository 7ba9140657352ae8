#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "betamixer/error.hpp"

namespace bmx::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f32(std::ostream& out, const float* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
  } else {
    for (std::size_t i = 0; i < n; ++i) put_u32(out, std::bit_cast<std::uint32_t>(data[i]));
  }
}

inline void get_exact(std::istream& in, char* dst, std::size_t n, const char* what) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw FormatError(std::string("truncated file while reading ") + what);
}

inline std::uint32_t get_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  get_exact(in, reinterpret_cast<char*>(b), 4, what);
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
}

inline void get_f32(std::istream& in, float* dst, std::size_t n, const char* what) {
  if constexpr (std::endian::native == std::endian::little) {
    get_exact(in, reinterpret_cast<char*>(dst), n * sizeof(float), what);
  } else {
    for (std::size_t i = 0; i < n; ++i) dst[i] = std::bit_cast<float>(get_u32(in, what));
  }
}

inline void expect_magic(std::istream& in, const char (&magic)[5]) {
  char buf[4];
  get_exact(in, buf, 4, "magic");
  if (std::memcmp(buf, magic, 4) != 0) throw FormatError(std::string("bad magic, expected ") + magic);
}

}  // namespace bmx::io
