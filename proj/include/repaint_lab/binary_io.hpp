#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace repaint_lab::binary {

// Little-endian primitives shared by every native file format.

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f32(std::ostream& os, float f) { put_u32(os, std::bit_cast<std::uint32_t>(f)); }

inline void put_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

/// Returns false on short read instead of throwing so callers can report
/// header vs payload truncation separately.
inline bool get_u32(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

inline bool get_f32(std::istream& is, float& f) {
  std::uint32_t bits;
  if (!get_u32(is, bits)) return false;
  f = std::bit_cast<float>(bits);
  return true;
}

inline bool check_magic(std::istream& is, const char (&magic)[5]) {
  char buf[4];
  if (!is.read(buf, 4)) return false;
  return std::memcmp(buf, magic, 4) == 0;
}

}  // namespace repaint_lab::binary
