#pragma once

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "repaint_lab/gmm.hpp"
#include "repaint_lab/image.hpp"
#include "repaint_lab/kv_config.hpp"
#include "repaint_lab/rng.hpp"

namespace repaint_lab {

/// One mirrored pair of elliptical structures. Geometry is given for the
/// left copy; the right copy sits at x' = width - 1 - x.
struct StructureSpec {
  std::string name;
  double center_x = 0.0;
  double center_y = 0.0;
  double axis_x = 3.0;
  double axis_y = 3.0;
  double mean_left = 0.6;
  double mean_right = 0.6;
  double std_left = 0.1;
  double std_right = 0.1;
  double rho = 0.0;  ///< left/right intensity correlation

  double mean(Side s) const { return s == Side::left ? mean_left : mean_right; }
  double stddev(Side s) const { return s == Side::left ? std_left : std_right; }
};

/// Synthetic bilateral "brain": background plus mirrored ellipse pairs whose
/// (left, right) intensities are bivariate normal per structure and
/// independent across structures.
struct PhantomSpec {
  std::size_t width = 32;
  std::size_t height = 32;
  double background = 0.1;
  double smoothing = 0.0;    ///< Gaussian sigma in pixels; 0 disables
  double pixel_noise = 0.0;  ///< std of iid per-pixel noise added after smoothing
  std::vector<StructureSpec> structures;

  const StructureSpec& structure(const std::string& name) const {
    for (auto& s : structures)
      if (s.name == name) return s;
    throw std::out_of_range("PhantomSpec: no structure named '" + name + "'");
  }

  BinaryMask structure_mask(const StructureSpec& s, Side side) const {
    const double cx = side == Side::left ? s.center_x : static_cast<double>(width) - 1.0 - s.center_x;
    BinaryMask m(width, height);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double dx = (static_cast<double>(x) - cx) / s.axis_x;
        const double dy = (static_cast<double>(y) - s.center_y) / s.axis_y;
        if (dx * dx + dy * dy <= 1.0) m.set(x, y, true);
      }
    return m;
  }

  StructureAtlas atlas() const {
    StructureAtlas out(width, height);
    for (auto& s : structures) {
      out.add(s.name, Side::left, structure_mask(s, Side::left));
      out.add(s.name, Side::right, structure_mask(s, Side::right));
    }
    return out;
  }

  void validate() const {
    if (width == 0 || height == 0) throw std::invalid_argument("PhantomSpec: zero dimension");
    if (width % 2 != 0) throw std::invalid_argument("PhantomSpec: width must be even");
    if (smoothing < 0.0 || smoothing > 1.5) throw std::invalid_argument("PhantomSpec: smoothing must lie in [0, 1.5]");
    if (pixel_noise < 0.0) throw std::invalid_argument("PhantomSpec: negative pixel noise");
    std::vector<std::pair<std::string, BinaryMask>> placed;
    for (auto& s : structures) {
      if (s.name.empty()) throw std::invalid_argument("PhantomSpec: unnamed structure");
      if (!(s.axis_x > 0.0 && s.axis_y > 0.0)) throw std::invalid_argument("PhantomSpec: '" + s.name + "' axes must be positive");
      if (std::abs(s.rho) > 1.0) throw std::invalid_argument("PhantomSpec: '" + s.name + "' |rho| > 1");
      if (s.std_left < 0.0 || s.std_right < 0.0) throw std::invalid_argument("PhantomSpec: '" + s.name + "' negative std");
      for (Side side : {Side::left, Side::right}) {
        BinaryMask m = structure_mask(s, side);
        if (m.count() == 0) throw std::invalid_argument("PhantomSpec: '" + s.name + "' covers no pixel");
        for (auto& [other, om] : placed)
          if (mask_and(om, m).count() != 0)
            throw std::invalid_argument("PhantomSpec: structures '" + s.name + "' and '" + other + "' overlap");
        placed.emplace_back(s.name + "/" + to_string(side), std::move(m));
      }
    }
  }
};

/// Desk-scale default: 32x32, thalamus/caudate/putamen pairs, background 0.1,
/// intensity N(0.6, 0.1^2) with left/right correlation `rho` for every pair.
inline PhantomSpec default_phantom_spec(double rho = 0.9) {
  PhantomSpec spec;
  spec.structures = {
      {"thalamus", 11.5, 17.0, 3.0, 4.0, 0.6, 0.6, 0.1, 0.1, rho},
      {"caudate", 9.5, 8.5, 3.0, 3.0, 0.6, 0.6, 0.1, 0.1, rho},
      {"putamen", 4.5, 16.0, 3.0, 4.0, 0.6, 0.6, 0.1, 0.1, rho},
  };
  return spec;
}

struct PhantomSample {
  Image image;
  StructureAtlas atlas;
  /// structure name -> drawn (left, right) intensity
  std::map<std::string, std::pair<double, double>> latents;
};

namespace detail {
inline Image render_phantom(const PhantomSpec& spec, const std::map<std::string, std::pair<double, double>>& latents) {
  Image img(spec.width, spec.height, spec.background);
  for (auto& s : spec.structures) {
    const auto& [aL, aR] = latents.at(s.name);
    for (Side side : {Side::left, Side::right}) {
      const BinaryMask m = spec.structure_mask(s, side);
      const double a = side == Side::left ? aL : aR;
      for (std::size_t i = 0; i < img.size(); ++i)
        if (m[i]) img[i] = a;
    }
  }
  return gaussian_smooth(img, spec.smoothing);
}

// (a_L, a_R) from standard normals z1, z2 via the 2x2 Cholesky factor.
inline std::pair<double, double> correlate(const StructureSpec& s, double z1, double z2) {
  const double aL = s.mean_left + s.std_left * z1;
  const double aR = s.mean_right + s.std_right * (s.rho * z1 + std::sqrt(std::max(0.0, 1.0 - s.rho * s.rho)) * z2);
  return {aL, aR};
}
}  // namespace detail

inline PhantomSample generate(const PhantomSpec& spec, Rng& rng) {
  spec.validate();
  std::normal_distribution<double> n01(0.0, 1.0);
  PhantomSample out;
  for (auto& s : spec.structures) {
    const double z1 = n01(rng), z2 = n01(rng);
    out.latents[s.name] = detail::correlate(s, z1, z2);
  }
  out.image = detail::render_phantom(spec, out.latents);
  if (spec.pixel_noise > 0.0)
    for (auto& v : out.image.pixels()) v += spec.pixel_noise * n01(rng);
  out.atlas = spec.atlas();
  return out;
}

struct ConditionalMoments {
  double mean;
  double variance;
  /// true when the known side carries no information (its std is 0) and the
  /// marginal of the hidden side was returned
  bool vacuous = false;
};

/// Bivariate normal conditional of the hidden side given the known side's value.
inline ConditionalMoments conditional_oracle(const PhantomSpec& spec, const std::string& structure, Side known_side,
                                             double known_value) {
  const StructureSpec& s = spec.structure(structure);
  const Side hidden = opposite(known_side);
  const double mk = s.mean(known_side), sk = s.stddev(known_side);
  const double mh = s.mean(hidden), sh = s.stddev(hidden);
  if (sk == 0.0) return {mh, sh * sh, sh > 0.0};
  return {mh + s.rho * (sh / sk) * (known_value - mk), sh * sh * (1.0 - s.rho * s.rho), false};
}

/// Exact pixel-space law of generate(): one Gaussian whose covariance is
/// pixel_noise^2 I plus a rank-2-per-structure term built from the (smoothed)
/// structure indicators and the latent Cholesky factors.
inline GmmDataModel exact_gaussian_from_spec(const PhantomSpec& spec) {
  spec.validate();
  std::map<std::string, std::pair<double, double>> means;
  for (auto& s : spec.structures) means[s.name] = {s.mean_left, s.mean_right};
  GmmComponent comp;
  comp.weight = 1.0;
  comp.mean = detail::render_phantom(spec, means);
  comp.var = spec.pixel_noise * spec.pixel_noise;
  for (auto& s : spec.structures) {
    const Image left = gaussian_smooth(spec.structure_mask(s, Side::left).to_image(), spec.smoothing);
    const Image right = gaussian_smooth(spec.structure_mask(s, Side::right).to_image(), spec.smoothing);
    const double l00 = s.std_left;
    const double l10 = s.std_right * s.rho;
    const double l11 = s.std_right * std::sqrt(std::max(0.0, 1.0 - s.rho * s.rho));
    Image f1(spec.width, spec.height), f2(spec.width, spec.height);
    for (std::size_t i = 0; i < f1.size(); ++i) {
      f1[i] = l00 * left[i] + l10 * right[i];
      f2[i] = l11 * right[i];
    }
    if (l00 != 0.0 || l10 != 0.0) comp.factors.push_back(std::move(f1));
    if (l11 != 0.0) comp.factors.push_back(std::move(f2));
  }
  return GmmDataModel({std::move(comp)});
}

/// Equal-weight mixture of phantoms rendered at quantile-spaced latent draws.
///
/// Every latent coordinate takes the n midpoint quantiles Phi^-1((k+0.5)/n)
/// exactly once, each coordinate independently permuted by `rng` (a Latin
/// hypercube), so the mixture's per-structure marginals are stratified. With
/// n = 1 the single component is the rendering at the prior means. Component
/// variance is pixel_noise^2; the discretization error shrinks as n grows.
inline GmmDataModel gmm_from_spec(const PhantomSpec& spec, int n_components, Rng& rng) {
  spec.validate();
  if (n_components < 1) throw std::invalid_argument("gmm_from_spec: need at least one component");
  const boost::math::normal_distribution<double> std_normal;
  std::vector<double> quantiles(n_components);
  for (int k = 0; k < n_components; ++k) quantiles[k] = boost::math::quantile(std_normal, (k + 0.5) / n_components);

  const std::size_t dims = 2 * spec.structures.size();
  std::vector<std::vector<int>> perm(dims, std::vector<int>(n_components));
  for (auto& p : perm) {
    std::iota(p.begin(), p.end(), 0);
    if (n_components > 1) std::shuffle(p.begin(), p.end(), rng);
  }

  std::vector<GmmComponent> comps;
  for (int k = 0; k < n_components; ++k) {
    std::map<std::string, std::pair<double, double>> latents;
    for (std::size_t s = 0; s < spec.structures.size(); ++s) {
      const double z1 = quantiles[perm[2 * s][k]];
      const double z2 = quantiles[perm[2 * s + 1][k]];
      latents[spec.structures[s].name] = detail::correlate(spec.structures[s], z1, z2);
    }
    comps.push_back({1.0 / n_components, detail::render_phantom(spec, latents), spec.pixel_noise * spec.pixel_noise, {}});
  }
  // equal weights must sum to 1 within 1e-12
  double wsum = 0.0;
  for (auto& c : comps) wsum += c.weight;
  comps.back().weight += 1.0 - wsum;
  return GmmDataModel(std::move(comps));
}

/// Smooth random texture: a sum of isotropic Gaussian blobs with uniform
/// centres and amplitudes in [-1, 1]. Dense gradients everywhere make it a
/// registration target where displacement is identifiable away from edges.
inline Image blob_texture(std::size_t width, std::size_t height, int blobs, double sigma, Rng& rng) {
  if (blobs < 1 || !(sigma > 0.0)) throw std::invalid_argument("blob_texture: need blobs >= 1 and sigma > 0");
  std::uniform_real_distribution<double> ux(0.0, static_cast<double>(width)), uy(0.0, static_cast<double>(height));
  std::uniform_real_distribution<double> amp(-1.0, 1.0);
  Image img(width, height, 0.0);
  for (int b = 0; b < blobs; ++b) {
    const double cx = ux(rng), cy = uy(rng), a = amp(rng);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        img(x, y) += a * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      }
  }
  return img;
}

/// Reads the phantom key-value format:
///
///   width = 32            height = 32
///   background = 0.1      smoothing = 0     noise = 0
///   [structure thalamus]
///   center = 11.5, 17     axes = 3, 4
///   mean = 0.6 | mean_left = .., mean_right = ..
///   std = 0.1  | std_left = ..,  std_right = ..
///   rho = 0.9
inline PhantomSpec parse_phantom_spec(const KvDocument& doc) {
  PhantomSpec spec;
  const auto& g = doc.global();
  for (auto& [key, e] : g.entries)
    if (key != "width" && key != "height" && key != "background" && key != "smoothing" && key != "noise")
      throw ConfigError("unknown phantom key '" + key + "'", e.line);
  const long long w = g.integer("width", 32), h = g.integer("height", 32);
  if (w <= 0 || h <= 0) throw ConfigError("width/height must be positive", g.has("width") ? g.entry("width").line : 0);
  spec.width = static_cast<std::size_t>(w);
  spec.height = static_cast<std::size_t>(h);
  spec.background = g.num("background", 0.1);
  spec.smoothing = g.num("smoothing", 0.0);
  spec.pixel_noise = g.num("noise", 0.0);
  std::vector<int> section_lines;
  for (auto& sec : doc.all()) {
    if (sec.kind.empty()) continue;
    if (sec.kind != "structure") throw ConfigError("unknown section kind '" + sec.kind + "'", sec.line);
    if (sec.name.empty()) throw ConfigError("structure section needs a name", sec.line);
    for (auto& [key, e] : sec.entries)
      if (key != "center" && key != "axes" && key != "mean" && key != "mean_left" && key != "mean_right" && key != "std" &&
          key != "std_left" && key != "std_right" && key != "rho")
        throw ConfigError("unknown structure key '" + key + "'", e.line);
    StructureSpec s;
    s.name = sec.name;
    auto center = sec.numbers("center");
    if (center.size() != 2) throw ConfigError("center needs 2 values", sec.entry("center").line);
    auto axes = sec.numbers("axes");
    if (axes.size() != 2) throw ConfigError("axes needs 2 values", sec.entry("axes").line);
    if (!(axes[0] > 0.0 && axes[1] > 0.0)) throw ConfigError("axes must be positive", sec.entry("axes").line);
    s.center_x = center[0];
    s.center_y = center[1];
    s.axis_x = axes[0];
    s.axis_y = axes[1];
    const double mean = sec.num("mean", 0.6), sd = sec.num("std", 0.1);
    s.mean_left = sec.num("mean_left", mean);
    s.mean_right = sec.num("mean_right", mean);
    s.std_left = sec.num("std_left", sd);
    s.std_right = sec.num("std_right", sd);
    for (const char* k : {"std", "std_left", "std_right"})
      if (sec.has(k) && sec.num(k) < 0.0) throw ConfigError("std must be >= 0", sec.entry(k).line);
    s.rho = sec.num("rho", 0.0);
    if (std::abs(s.rho) > 1.0) throw ConfigError("rho must lie in [-1, 1]", sec.entry("rho").line);
    for (auto& other : spec.structures)
      if (other.name == s.name) throw ConfigError("duplicate structure '" + s.name + "'", sec.line);
    spec.structures.push_back(std::move(s));
    section_lines.push_back(sec.line);
  }

  auto global_line = [&](const char* key) { return g.has(key) ? g.entry(key).line : 0; };
  if (spec.width % 2 != 0) throw ConfigError("width must be even", global_line("width"));
  if (spec.smoothing < 0.0 || spec.smoothing > 1.5) throw ConfigError("smoothing must lie in [0, 1.5]", global_line("smoothing"));
  if (spec.pixel_noise < 0.0) throw ConfigError("noise must be >= 0", global_line("noise"));
  // validate prefixes so an overlap or empty ellipse is blamed on its own section
  PhantomSpec partial = spec;
  partial.structures.clear();
  for (std::size_t i = 0; i < spec.structures.size(); ++i) {
    partial.structures.push_back(spec.structures[i]);
    try {
      partial.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what(), section_lines[i]);
    }
  }
  return spec;
}

inline PhantomSpec read_phantom_spec(const std::filesystem::path& path) {
  return parse_phantom_spec(KvDocument::parse_file(path));
}

}  // namespace repaint_lab
