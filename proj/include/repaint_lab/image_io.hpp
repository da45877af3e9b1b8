#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

#include "repaint_lab/binary_io.hpp"
#include "repaint_lab/image.hpp"

namespace repaint_lab {

/// Failure reading or writing a native grid file. `kind()` distinguishes the
/// failure modes so callers (and tests) need not parse messages.
class ImageIoError : public std::runtime_error {
 public:
  enum class Kind { open, header, truncated, overflow, write };
  ImageIoError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr char kGridMagic[5] = "F32G";
inline constexpr std::uint64_t kMaxGridPixels = std::uint64_t{1} << 28;

// .f32grid layout: "F32G", u32 width, u32 height, width*height f32, all
// little-endian, row-major from the top-left pixel. Pixels are narrowed to
// float on write, so read(write(img)) is exact for float-representable data.

inline void write_grid(const Image& img, std::ostream& os) {
  binary::put_magic(os, kGridMagic);
  binary::put_u32(os, static_cast<std::uint32_t>(img.width()));
  binary::put_u32(os, static_cast<std::uint32_t>(img.height()));
  for (double v : img.pixels()) binary::put_f32(os, static_cast<float>(v));
}

inline Image read_grid(std::istream& is) {
  if (!binary::check_magic(is, kGridMagic)) throw ImageIoError(ImageIoError::Kind::header, "f32grid: bad magic");
  std::uint32_t w = 0, h = 0;
  if (!binary::get_u32(is, w) || !binary::get_u32(is, h))
    throw ImageIoError(ImageIoError::Kind::header, "f32grid: header truncated");
  if (w == 0 || h == 0) throw ImageIoError(ImageIoError::Kind::header, "f32grid: zero dimension");
  const std::uint64_t n = std::uint64_t{w} * std::uint64_t{h};
  if (n > kMaxGridPixels)
    throw ImageIoError(ImageIoError::Kind::overflow,
                       "f32grid: " + std::to_string(w) + "x" + std::to_string(h) + " exceeds pixel limit");
  std::vector<double> px(static_cast<std::size_t>(n));
  for (auto& v : px) {
    float f;
    if (!binary::get_f32(is, f)) throw ImageIoError(ImageIoError::Kind::truncated, "f32grid: payload truncated");
    v = f;
  }
  return Image(w, h, std::move(px));
}

inline void write_image(const Image& img, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ImageIoError(ImageIoError::Kind::open, "cannot open '" + path.string() + "' for writing");
  write_grid(img, os);
  if (!os) throw ImageIoError(ImageIoError::Kind::write, "write failed: '" + path.string() + "'");
}

inline Image read_image(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ImageIoError(ImageIoError::Kind::open, "cannot open '" + path.string() + "'");
  return read_grid(is);
}

inline void write_mask(const BinaryMask& m, const std::filesystem::path& path) { write_image(m.to_image(), path); }

inline BinaryMask read_mask(const std::filesystem::path& path) { return BinaryMask::from_image(read_image(path)); }

/// Binary 16-bit PGM ("P5", maxval 65535, big-endian samples) with [min,max]
/// stretched linearly onto [0,65535]. A constant image maps to 0. Non-finite
/// pixels are written as 0.
inline void write_pgm(const Image& img, std::ostream& os) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : img.pixels())
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  const double scale = (hi > lo) ? 65535.0 / (hi - lo) : 0.0;
  os << "P5\n" << img.width() << " " << img.height() << "\n65535\n";
  for (double v : img.pixels()) {
    double s = std::isfinite(v) ? (v - lo) * scale : 0.0;
    auto q = static_cast<std::uint16_t>(std::clamp(std::lround(s), 0L, 65535L));
    const char b[2] = {static_cast<char>(q >> 8), static_cast<char>(q & 0xff)};
    os.write(b, 2);
  }
}

inline void write_pgm(const Image& img, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ImageIoError(ImageIoError::Kind::open, "cannot open '" + path.string() + "' for writing");
  write_pgm(img, os);
}

}  // namespace repaint_lab
