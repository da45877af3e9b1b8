#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace repaint_lab {

/// Thrown whenever two grids that must share a shape do not.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Row-major 2-D grid of doubles, top-left origin. Carries intensities,
/// per-pixel statistics maps and log-Jacobian maps alike.
class Image {
 public:
  Image() = default;
  Image(std::size_t width, std::size_t height, double fill = 0.0)
      : width_(width), height_(height), pixels_(width * height, fill) {
    if (width == 0 || height == 0) throw std::invalid_argument("Image: zero dimension");
  }
  Image(std::size_t width, std::size_t height, std::vector<double> pixels)
      : width_(width), height_(height), pixels_(std::move(pixels)) {
    if (width == 0 || height == 0) throw std::invalid_argument("Image: zero dimension");
    if (pixels_.size() != width * height) throw DimensionError("Image: pixel count != width*height");
  }

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  double& operator()(std::size_t x, std::size_t y) { return pixels_[y * width_ + x]; }
  double operator()(std::size_t x, std::size_t y) const { return pixels_[y * width_ + x]; }
  double& operator[](std::size_t i) { return pixels_[i]; }
  double operator[](std::size_t i) const { return pixels_[i]; }

  std::span<double> pixels() { return pixels_; }
  std::span<const double> pixels() const { return pixels_; }
  const std::vector<double>& data() const { return pixels_; }

  bool same_shape(std::size_t w, std::size_t h) const { return w == width_ && h == height_; }
  template <class Grid>
  bool same_shape(const Grid& other) const {
    return same_shape(other.width(), other.height());
  }

  bool all_finite() const {
    return std::all_of(pixels_.begin(), pixels_.end(), [](double v) { return std::isfinite(v); });
  }

  bool operator==(const Image&) const = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<double> pixels_;
};

/// {0,1} grid. A value of 1 marks a known (observed) pixel when the mask is
/// used for conditioning, or an inside pixel when used as a segmentation.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(std::size_t width, std::size_t height, bool fill = false)
      : width_(width), height_(height), bits_(width * height, fill ? 1 : 0) {
    if (width == 0 || height == 0) throw std::invalid_argument("BinaryMask: zero dimension");
  }
  BinaryMask(std::size_t width, std::size_t height, std::vector<std::uint8_t> bits)
      : width_(width), height_(height), bits_(std::move(bits)) {
    if (width == 0 || height == 0) throw std::invalid_argument("BinaryMask: zero dimension");
    if (bits_.size() != width * height) throw DimensionError("BinaryMask: bit count != width*height");
    for (auto& b : bits_)
      if (b > 1) throw std::invalid_argument("BinaryMask: values must be 0 or 1");
  }

  static BinaryMask ones(std::size_t w, std::size_t h) { return BinaryMask(w, h, true); }
  static BinaryMask zeros(std::size_t w, std::size_t h) { return BinaryMask(w, h, false); }

  /// Interprets an image holding exactly 0.0/1.0 values as a mask.
  static BinaryMask from_image(const Image& img) {
    std::vector<std::uint8_t> bits(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
      if (img[i] == 1.0)
        bits[i] = 1;
      else if (img[i] != 0.0)
        throw std::invalid_argument("BinaryMask::from_image: value is neither 0 nor 1");
    }
    return BinaryMask(img.width(), img.height(), std::move(bits));
  }

  Image to_image() const {
    std::vector<double> px(bits_.begin(), bits_.end());
    return Image(width_, height_, std::move(px));
  }

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t size() const { return bits_.size(); }

  bool operator()(std::size_t x, std::size_t y) const { return bits_[y * width_ + x] != 0; }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  void set(std::size_t x, std::size_t y, bool v) { bits_[y * width_ + x] = v ? 1 : 0; }
  void set(std::size_t i, bool v) { bits_[i] = v ? 1 : 0; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits_) n += b;
    return n;
  }

  template <class Grid>
  bool same_shape(const Grid& other) const {
    return other.width() == width_ && other.height() == height_;
  }

  bool operator==(const BinaryMask&) const = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<std::uint8_t> bits_;
};

namespace detail {
template <class A, class B>
void require_same_shape(const A& a, const B& b, const char* what) {
  if (a.width() != b.width() || a.height() != b.height())
    throw DimensionError(std::string(what) + ": dimension mismatch (" + std::to_string(a.width()) + "x" +
                         std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                         std::to_string(b.height()) + ")");
}
}  // namespace detail

inline BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b) {
  detail::require_same_shape(a, b, "mask_and");
  BinaryMask out(a.width(), a.height());
  for (std::size_t i = 0; i < a.size(); ++i) out.set(i, a[i] && b[i]);
  return out;
}

inline BinaryMask mask_or(const BinaryMask& a, const BinaryMask& b) {
  detail::require_same_shape(a, b, "mask_or");
  BinaryMask out(a.width(), a.height());
  for (std::size_t i = 0; i < a.size(); ++i) out.set(i, a[i] || b[i]);
  return out;
}

inline BinaryMask mask_complement(const BinaryMask& m) {
  BinaryMask out(m.width(), m.height());
  for (std::size_t i = 0; i < m.size(); ++i) out.set(i, !m[i]);
  return out;
}

inline Image apply_mask(const Image& img, const BinaryMask& m) {
  detail::require_same_shape(img, m, "apply_mask");
  Image out(img.width(), img.height());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = m[i] ? img[i] : 0.0;
  return out;
}

/// Reflects columns about the vertical midline: out(x,y) = in(w-1-x, y).
inline BinaryMask mirror_mask(const BinaryMask& m) {
  if (m.width() % 2 != 0) throw std::invalid_argument("mirror_mask: odd width has no pixel-boundary midline");
  BinaryMask out(m.width(), m.height());
  for (std::size_t y = 0; y < m.height(); ++y)
    for (std::size_t x = 0; x < m.width(); ++x) out.set(x, y, m(m.width() - 1 - x, y));
  return out;
}

/// generated where keep == 0, original where keep == 1.
///
/// Pixels are selected, never blended, so the result equals `original`
/// bit-for-bit on the kept region and `generated` bit-for-bit elsewhere.
inline Image compose(const Image& generated, const Image& original, const BinaryMask& keep) {
  detail::require_same_shape(generated, original, "compose");
  detail::require_same_shape(generated, keep, "compose");
  Image out(generated.width(), generated.height());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep[i] ? original[i] : generated[i];
  return out;
}

/// Mean of img over the pixels where region == 1.
inline double region_mean(const Image& img, const BinaryMask& region) {
  detail::require_same_shape(img, region, "region_mean");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < img.size(); ++i)
    if (region[i]) {
      sum += img[i];
      ++n;
    }
  if (n == 0) throw std::invalid_argument("region_mean: empty region");
  return sum / static_cast<double>(n);
}

enum class Side { left, right };

inline const char* to_string(Side s) { return s == Side::left ? "left" : "right"; }
inline Side opposite(Side s) { return s == Side::left ? Side::right : Side::left; }
inline Side parse_side(const std::string& s) {
  if (s == "left") return Side::left;
  if (s == "right") return Side::right;
  throw std::invalid_argument("unknown side '" + s + "'");
}

/// Per-structure, per-side segmentation masks (1 inside the structure).
class StructureAtlas {
 public:
  StructureAtlas() = default;
  StructureAtlas(std::size_t width, std::size_t height) : width_(width), height_(height) {}

  void add(const std::string& structure, Side side, BinaryMask mask) {
    if (width_ == 0) {
      width_ = mask.width();
      height_ = mask.height();
    }
    if (mask.width() != width_ || mask.height() != height_)
      throw DimensionError("StructureAtlas: mask for '" + structure + "' has wrong dimensions");
    auto other = masks_.find({structure, opposite(side)});
    if (other != masks_.end() && mask_and(other->second, mask).count() != 0)
      throw std::invalid_argument("StructureAtlas: left/right masks of '" + structure + "' overlap");
    masks_[{structure, side}] = std::move(mask);
  }

  bool contains(const std::string& structure, Side side) const { return masks_.count({structure, side}) != 0; }

  const BinaryMask& at(const std::string& structure, Side side) const {
    auto it = masks_.find({structure, side});
    if (it == masks_.end())
      throw std::out_of_range("StructureAtlas: no entry for (" + structure + ", " + to_string(side) + ")");
    return it->second;
  }

  std::vector<std::string> structures() const {
    std::vector<std::string> out;
    for (auto& [key, mask] : masks_)
      if (out.empty() || out.back() != key.first) out.push_back(key.first);
    return out;
  }

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  const std::map<std::pair<std::string, Side>, BinaryMask>& entries() const { return masks_; }

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::map<std::pair<std::string, Side>, BinaryMask> masks_;
};

/// Separable truncated Gaussian blur with edge replication. sigma <= 0 is a no-op.
inline Image gaussian_smooth(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double norm = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    norm += kernel[k + radius];
  }
  for (auto& k : kernel) k /= norm;

  const int w = static_cast<int>(img.width());
  const int h = static_cast<int>(img.height());
  Image tmp(img.width(), img.height());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * img(std::clamp(x + k, 0, w - 1), y);
      tmp(x, y) = acc;
    }
  Image out(img.width(), img.height());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp(x, std::clamp(y + k, 0, h - 1));
      out(x, y) = acc;
    }
  return out;
}

}  // namespace repaint_lab
