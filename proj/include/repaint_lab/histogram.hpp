#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "repaint_lab/image.hpp"

namespace repaint_lab {

struct HistogramMatchResult {
  Image image;
  /// Set when the reference is constant; `image` is then that constant.
  bool degenerate_reference = false;
};

/// Monotone intensity remapping of `source` onto the distribution of
/// `reference`.
///
/// Both histograms use `nbins` equal-width bins spanning the union of the two
/// ranges. Each source pixel is placed at its mid-rank quantile (ties share
/// a quantile, so equal inputs stay equal) and sent through the reference's
/// piecewise-linear inverse CDF. Results are clamped to the reference range.
inline HistogramMatchResult histogram_match(const Image& source, const Image& reference, int nbins) {
  if (source.empty() || reference.empty()) throw std::invalid_argument("histogram_match: empty image");
  if (nbins < 2) throw std::invalid_argument("histogram_match: nbins must be >= 2");

  const auto [rmin_it, rmax_it] = std::minmax_element(reference.pixels().begin(), reference.pixels().end());
  const double rmin = *rmin_it, rmax = *rmax_it;
  if (rmin == rmax) return {Image(source.width(), source.height(), rmin), true};

  const auto [smin_it, smax_it] = std::minmax_element(source.pixels().begin(), source.pixels().end());
  const double lo = std::min(rmin, *smin_it);
  const double hi = std::max(rmax, *smax_it);
  const double width = (hi - lo) / nbins;

  std::vector<double> cdf(nbins + 1, 0.0);
  for (double v : reference.pixels()) {
    int b = static_cast<int>((v - lo) / width);
    cdf[std::clamp(b, 0, nbins - 1) + 1] += 1.0;
  }
  const double nref = static_cast<double>(reference.size());
  for (int b = 1; b <= nbins; ++b) cdf[b] = cdf[b - 1] + cdf[b] / nref;
  cdf[nbins] = 1.0;

  auto inverse_cdf = [&](double q) {
    // first edge whose CDF reaches q; the bin below it carries mass
    auto it = std::lower_bound(cdf.begin() + 1, cdf.end(), q);
    int b = static_cast<int>(it - cdf.begin()) - 1;
    b = std::clamp(b, 0, nbins - 1);
    while (b < nbins - 1 && cdf[b + 1] == cdf[b]) ++b;
    const double mass = cdf[b + 1] - cdf[b];
    const double frac = mass > 0.0 ? (q - cdf[b]) / mass : 0.5;
    return std::clamp(lo + (b + std::clamp(frac, 0.0, 1.0)) * width, rmin, rmax);
  };

  const std::size_t n = source.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return source[a] < source[b]; });

  Image out(source.width(), source.height());
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && source[order[j]] == source[order[i]]) ++j;
    // mid-rank of positions i..j-1, each at (k + 0.5) / n
    const double q = (0.5 * static_cast<double>(i + j)) / static_cast<double>(n);
    const double mapped = inverse_cdf(q);
    for (std::size_t k = i; k < j; ++k) out[order[k]] = mapped;
    i = j;
  }
  return {std::move(out), false};
}

/// Kolmogorov distance between the empirical CDFs of two images' pixels.
inline double ecdf_sup_distance(const Image& a, const Image& b) {
  std::vector<double> xa(a.pixels().begin(), a.pixels().end());
  std::vector<double> xb(b.pixels().begin(), b.pixels().end());
  std::sort(xa.begin(), xa.end());
  std::sort(xb.begin(), xb.end());
  const double na = static_cast<double>(xa.size()), nb = static_cast<double>(xb.size());
  std::size_t i = 0, j = 0;
  double best = 0.0;
  while (i < xa.size() || j < xb.size()) {
    double v;
    if (j >= xb.size() || (i < xa.size() && xa[i] <= xb[j]))
      v = xa[i];
    else
      v = xb[j];
    while (i < xa.size() && xa[i] <= v) ++i;
    while (j < xb.size() && xb[j] <= v) ++j;
    best = std::max(best, std::abs(i / na - j / nb));
  }
  return best;
}

/// Largest gap between the histogram CDFs of two images, both binned into
/// `nbins` equal-width bins over [lo, hi] and compared at every bin edge.
inline double histogram_cdf_distance(const Image& a, const Image& b, int nbins, double lo, double hi) {
  if (a.empty() || b.empty()) throw std::invalid_argument("histogram_cdf_distance: empty image");
  if (nbins < 1) throw std::invalid_argument("histogram_cdf_distance: nbins must be >= 1");
  if (!(hi > lo)) return 0.0;
  const double width = (hi - lo) / nbins;
  auto counts = [&](const Image& img) {
    std::vector<double> c(nbins, 0.0);
    for (double v : img.pixels()) c[std::clamp(static_cast<int>((v - lo) / width), 0, nbins - 1)] += 1.0;
    return c;
  };
  const auto ca = counts(a), cb = counts(b);
  double fa = 0.0, fb = 0.0, best = 0.0;
  for (int k = 0; k < nbins; ++k) {
    fa += ca[k] / static_cast<double>(a.size());
    fb += cb[k] / static_cast<double>(b.size());
    best = std::max(best, std::abs(fa - fb));
  }
  return best;
}

/// histogram_cdf_distance over the union of the two images' ranges.
inline double histogram_cdf_distance(const Image& a, const Image& b, int nbins) {
  if (a.empty() || b.empty()) throw std::invalid_argument("histogram_cdf_distance: empty image");
  const auto [amin, amax] = std::minmax_element(a.pixels().begin(), a.pixels().end());
  const auto [bmin, bmax] = std::minmax_element(b.pixels().begin(), b.pixels().end());
  return histogram_cdf_distance(a, b, nbins, std::min(*amin, *bmin), std::max(*amax, *bmax));
}

}  // namespace repaint_lab
