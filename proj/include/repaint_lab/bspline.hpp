#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include "repaint_lab/binary_io.hpp"
#include "repaint_lab/image.hpp"
#include "repaint_lab/rng.hpp"

namespace repaint_lab {

/// Uniform cubic B-spline basis pieces at local offset f in [0,1):
/// weights for controls i-1, i, i+1, i+2 of the containing cell.
inline std::array<double, 4> bspline_weights(double f) {
  const double f2 = f * f, f3 = f2 * f;
  return {(1.0 - f) * (1.0 - f) * (1.0 - f) / 6.0, (3.0 * f3 - 6.0 * f2 + 4.0) / 6.0,
          (-3.0 * f3 + 3.0 * f2 + 3.0 * f + 1.0) / 6.0, f3 / 6.0};
}

inline std::array<double, 4> bspline_derivatives(double f) {
  const double f2 = f * f;
  return {-0.5 * (1.0 - f) * (1.0 - f), 1.5 * f2 - 2.0 * f, -1.5 * f2 + f + 0.5, 0.5 * f2};
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

/// Free-form deformation: 2-D control displacements (pixels) on a uniform grid.
///
/// Control (i, j) sits at pixel position ((i-1) * spacing, (j-1) * spacing),
/// leaving one control of margin before the image origin and enough after
/// the far edge for every pixel to see a full 4x4 support.
class BSplineField {
 public:
  BSplineField() = default;
  BSplineField(double spacing, std::size_t nx, std::size_t ny)
      : spacing_(spacing), nx_(nx), ny_(ny), ctrl_(nx * ny) {
    if (!(spacing > 0.0)) throw std::invalid_argument("BSplineField: spacing must be positive");
    if (nx < 4 || ny < 4) throw std::invalid_argument("BSplineField: grid must be at least 4x4");
  }

  /// Smallest grid covering a width x height image at `spacing`.
  static BSplineField covering(std::size_t width, std::size_t height, double spacing) {
    if (!(spacing > 0.0)) throw std::invalid_argument("BSplineField: spacing must be positive");
    return BSplineField(spacing, grid_extent(width, spacing), grid_extent(height, spacing));
  }

  static std::size_t grid_extent(std::size_t pixels, double spacing) {
    return static_cast<std::size_t>(std::floor((static_cast<double>(pixels) - 1.0) / spacing)) + 4;
  }

  double spacing() const { return spacing_; }
  std::size_t nx() const { return nx_; }
  std::size_t ny() const { return ny_; }
  std::size_t count() const { return ctrl_.size(); }

  Vec2& at(std::size_t i, std::size_t j) { return ctrl_[j * nx_ + i]; }
  const Vec2& at(std::size_t i, std::size_t j) const { return ctrl_[j * nx_ + i]; }
  Vec2& operator[](std::size_t k) { return ctrl_[k]; }
  const Vec2& operator[](std::size_t k) const { return ctrl_[k]; }

  /// Pixel position of control (i, j).
  Vec2 position(std::size_t i, std::size_t j) const {
    return {(static_cast<double>(i) - 1.0) * spacing_, (static_cast<double>(j) - 1.0) * spacing_};
  }

  bool covers(std::size_t width, std::size_t height) const {
    return nx_ >= grid_extent(width, spacing_) && ny_ >= grid_extent(height, spacing_);
  }

  void require_covers(std::size_t width, std::size_t height) const {
    if (!covers(width, height))
      throw DimensionError("BSplineField: " + std::to_string(nx_) + "x" + std::to_string(ny_) +
                           " grid does not cover a " + std::to_string(width) + "x" + std::to_string(height) + " image");
  }

  bool all_finite() const {
    for (auto& c : ctrl_)
      if (!std::isfinite(c.x) || !std::isfinite(c.y)) return false;
    return true;
  }

 private:
  double spacing_ = 2.5;
  std::size_t nx_ = 0, ny_ = 0;
  std::vector<Vec2> ctrl_;
};

namespace detail {
/// Per-axis basis tables: first control index, weights and derivatives
/// (already divided by the spacing) for every pixel coordinate along one axis.
struct AxisBasis {
  std::vector<std::size_t> first;
  std::vector<std::array<double, 4>> w;
  std::vector<std::array<double, 4>> dw;

  AxisBasis(std::size_t n, double spacing) : first(n), w(n), dw(n) {
    for (std::size_t p = 0; p < n; ++p) {
      const double xi = static_cast<double>(p) / spacing;
      const double cell = std::floor(xi);
      const double f = xi - cell;
      first[p] = static_cast<std::size_t>(cell);  // control index of basis piece 0
      w[p] = bspline_weights(f);
      auto d = bspline_derivatives(f);
      for (auto& v : d) v /= spacing;
      dw[p] = d;
    }
  }
};
}  // namespace detail

/// Dense per-pixel displacement field, row-major like Image.
struct DisplacementField {
  std::size_t width = 0, height = 0;
  std::vector<Vec2> u;
  const Vec2& operator()(std::size_t x, std::size_t y) const { return u[y * width + x]; }
};

inline DisplacementField dense_displacement(const BSplineField& field, std::size_t width, std::size_t height) {
  field.require_covers(width, height);
  const detail::AxisBasis bx(width, field.spacing()), by(height, field.spacing());
  DisplacementField out{width, height, std::vector<Vec2>(width * height)};
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      Vec2 acc;
      for (int m = 0; m < 4; ++m)
        for (int l = 0; l < 4; ++l) {
          const double wgt = bx.w[x][l] * by.w[y][m];
          const Vec2& c = field.at(bx.first[x] + l, by.first[y] + m);
          acc.x += wgt * c.x;
          acc.y += wgt * c.y;
        }
      out.u[y * width + x] = acc;
    }
  return out;
}

/// Bilinear sample with coordinates clamped to the image domain.
inline double sample_bilinear(const Image& img, double px, double py) {
  const double maxx = static_cast<double>(img.width() - 1), maxy = static_cast<double>(img.height() - 1);
  px = std::clamp(px, 0.0, maxx);
  py = std::clamp(py, 0.0, maxy);
  std::size_t x0 = static_cast<std::size_t>(px), y0 = static_cast<std::size_t>(py);
  if (img.width() > 1 && x0 >= img.width() - 1) x0 = img.width() - 2;
  if (img.height() > 1 && y0 >= img.height() - 1) y0 = img.height() - 2;
  const std::size_t x1 = std::min(x0 + 1, img.width() - 1), y1 = std::min(y0 + 1, img.height() - 1);
  const double fx = px - static_cast<double>(x0), fy = py - static_cast<double>(y0);
  return (1 - fy) * ((1 - fx) * img(x0, y0) + fx * img(x1, y0)) + fy * ((1 - fx) * img(x0, y1) + fx * img(x1, y1));
}

/// Value and spatial gradient of the bilinear interpolant. The gradient
/// component is 0 along an axis where the coordinate was clamped.
inline double sample_bilinear_grad(const Image& img, double px, double py, double& gx, double& gy) {
  const double maxx = static_cast<double>(img.width() - 1), maxy = static_cast<double>(img.height() - 1);
  const bool clamp_x = px < 0.0 || px > maxx, clamp_y = py < 0.0 || py > maxy;
  px = std::clamp(px, 0.0, maxx);
  py = std::clamp(py, 0.0, maxy);
  std::size_t x0 = static_cast<std::size_t>(px), y0 = static_cast<std::size_t>(py);
  if (img.width() > 1 && x0 >= img.width() - 1) x0 = img.width() - 2;
  if (img.height() > 1 && y0 >= img.height() - 1) y0 = img.height() - 2;
  const std::size_t x1 = std::min(x0 + 1, img.width() - 1), y1 = std::min(y0 + 1, img.height() - 1);
  const double fx = px - static_cast<double>(x0), fy = py - static_cast<double>(y0);
  const double v00 = img(x0, y0), v10 = img(x1, y0), v01 = img(x0, y1), v11 = img(x1, y1);
  gx = clamp_x ? 0.0 : (1 - fy) * (v10 - v00) + fy * (v11 - v01);
  gy = clamp_y ? 0.0 : (1 - fx) * (v01 - v00) + fx * (v11 - v10);
  return (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11);
}

/// out(x) = img(x + u(x)), bilinear, edge-clamped.
inline Image warp(const Image& img, const DisplacementField& u) {
  if (u.width != img.width() || u.height != img.height()) throw DimensionError("warp: field/image shape mismatch");
  Image out(img.width(), img.height());
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x) {
      const Vec2& d = u(x, y);
      out(x, y) = sample_bilinear(img, static_cast<double>(x) + d.x, static_cast<double>(y) + d.y);
    }
  return out;
}

inline Image warp(const Image& img, const BSplineField& field) {
  return warp(img, dense_displacement(field, img.width(), img.height()));
}

struct LogJacMap {
  Image log_det;       ///< log det(I + grad u); NaN where folded
  BinaryMask folding;  ///< 1 where det <= 0
  std::size_t fold_count() const { return folding.count(); }
};

inline LogJacMap log_jacobian(const BSplineField& field, std::size_t width, std::size_t height) {
  field.require_covers(width, height);
  const detail::AxisBasis bx(width, field.spacing()), by(height, field.spacing());
  LogJacMap out{Image(width, height), BinaryMask(width, height)};
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      double ux_x = 0, ux_y = 0, uy_x = 0, uy_y = 0;
      for (int m = 0; m < 4; ++m)
        for (int l = 0; l < 4; ++l) {
          const Vec2& c = field.at(bx.first[x] + l, by.first[y] + m);
          const double wdx = bx.dw[x][l] * by.w[y][m];
          const double wdy = bx.w[x][l] * by.dw[y][m];
          ux_x += wdx * c.x;
          ux_y += wdy * c.x;
          uy_x += wdx * c.y;
          uy_y += wdy * c.y;
        }
      const double det = (1.0 + ux_x) * (1.0 + uy_y) - ux_y * uy_x;
      if (det > 0.0) {
        out.log_det(x, y) = std::log(det);
      } else {
        out.log_det(x, y) = std::numeric_limits<double>::quiet_NaN();
        out.folding.set(x, y, true);
      }
    }
  return out;
}

/// Low-frequency sinusoidal control field with random phases and
/// wavelengths between 1 and 1.5 image extents, rescaled so the largest dense
/// displacement component equals `max_displacement` pixels.
inline BSplineField smooth_random_field(std::size_t width, std::size_t height, double spacing, double max_displacement,
                                        Rng& rng) {
  BSplineField f = BSplineField::covering(width, height, spacing);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi), scale(1.0, 1.5);
  const double W = static_cast<double>(width), H = static_cast<double>(height);
  const double lx1 = scale(rng) * W, ly1 = scale(rng) * H, lx2 = scale(rng) * W, ly2 = scale(rng) * H;
  const double p1 = phase(rng), p2 = phase(rng), p3 = phase(rng), p4 = phase(rng);
  constexpr double tau = 2.0 * std::numbers::pi;
  for (std::size_t j = 0; j < f.ny(); ++j)
    for (std::size_t i = 0; i < f.nx(); ++i) {
      const Vec2 p = f.position(i, j);
      f.at(i, j) = {std::sin(tau * p.y / ly1 + p1) * std::cos(tau * p.x / lx1 + p2),
                    std::cos(tau * p.x / lx2 + p3) * std::sin(tau * p.y / ly2 + p4)};
    }
  double peak = 0.0;
  for (const Vec2& v : dense_displacement(f, width, height).u) peak = std::max({peak, std::abs(v.x), std::abs(v.y)});
  if (peak == 0.0) return f;
  for (std::size_t k = 0; k < f.count(); ++k) {
    f[k].x *= max_displacement / peak;
    f[k].y *= max_displacement / peak;
  }
  return f;
}

class FieldIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kFieldMagic[5] = "BSPF";

// Field file: "BSPF", f32 spacing, u32 nx, u32 ny, then nx*ny (dx, dy) f32
// pairs, row-major over the control grid, little-endian throughout.
inline void write_field(const BSplineField& f, std::ostream& os) {
  binary::put_magic(os, kFieldMagic);
  binary::put_f32(os, static_cast<float>(f.spacing()));
  binary::put_u32(os, static_cast<std::uint32_t>(f.nx()));
  binary::put_u32(os, static_cast<std::uint32_t>(f.ny()));
  for (std::size_t k = 0; k < f.count(); ++k) {
    binary::put_f32(os, static_cast<float>(f[k].x));
    binary::put_f32(os, static_cast<float>(f[k].y));
  }
}

inline BSplineField read_field(std::istream& is) {
  if (!binary::check_magic(is, kFieldMagic)) throw FieldIoError("field: bad magic");
  float spacing;
  std::uint32_t nx, ny;
  if (!binary::get_f32(is, spacing) || !binary::get_u32(is, nx) || !binary::get_u32(is, ny))
    throw FieldIoError("field: header truncated");
  if (std::uint64_t{nx} * ny > (std::uint64_t{1} << 26)) throw FieldIoError("field: grid too large");
  BSplineField f(spacing, nx, ny);
  for (std::size_t k = 0; k < f.count(); ++k) {
    float dx, dy;
    if (!binary::get_f32(is, dx) || !binary::get_f32(is, dy)) throw FieldIoError("field: payload truncated");
    f[k] = {dx, dy};
  }
  return f;
}

inline void write_field(const BSplineField& f, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FieldIoError("cannot open '" + path.string() + "' for writing");
  write_field(f, os);
}

inline BSplineField read_field(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FieldIoError("cannot open '" + path.string() + "'");
  return read_field(is);
}

}  // namespace repaint_lab
