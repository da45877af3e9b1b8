#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "repaint_lab/histogram.hpp"
#include "test_helpers.hpp"

using namespace repaint_lab;

namespace {
Image ramp(std::size_t w, std::size_t h, double lo, double hi) {
  Image img(w, h);
  const double n = static_cast<double>(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = lo + (hi - lo) * (static_cast<double>(i) + 0.5) / n;
  return img;
}

// Sorting-based oracle: the k-th smallest source pixel takes the k-th
// smallest reference value (equal-size images).
Image rank_transfer(const Image& src, const Image& ref) {
  std::vector<std::size_t> order(src.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return src[a] < src[b]; });
  std::vector<double> sorted(ref.pixels().begin(), ref.pixels().end());
  std::sort(sorted.begin(), sorted.end());
  Image out(src.width(), src.height());
  for (std::size_t k = 0; k < order.size(); ++k) out[order[k]] = sorted[k];
  return out;
}
}  // namespace

TEST(HistogramMatch, FixedPointUpToBinning) {
  Rng rng(10);
  const Image img = rlt::random_image(24, 24, rng);
  for (int nbins : {16, 64, 256}) {
    const auto res = histogram_match(img, img, nbins);
    EXPECT_FALSE(res.degenerate_reference);
    EXPECT_LE(histogram_cdf_distance(res.image, img, nbins), 1.0 / nbins);
  }
}

TEST(HistogramMatch, ConstantSourceMapsToMedianQuantile) {
  Rng rng(11);
  const Image ref = ramp(10, 10, 0.0, 1.0);
  const auto res = histogram_match(Image(5, 5, 0.3), ref, 64);
  const double v = res.image[0];
  for (double p : res.image.pixels()) EXPECT_EQ(p, v);
  EXPECT_NEAR(v, 0.5, 1.0 / 64);
}

TEST(HistogramMatch, UniformToUniformIsAffine) {
  const Image src = ramp(32, 32, 0.0, 1.0);
  const Image ref = ramp(32, 32, 2.0, 4.0);
  const auto res = histogram_match(src, ref, 256);
  const Image oracle = rank_transfer(src, ref);
  const double bin = 4.0 / 256;
  for (std::size_t i = 0; i < src.size(); ++i) {
    EXPECT_NEAR(res.image[i], 2.0 + 2.0 * src[i], bin);
    EXPECT_NEAR(res.image[i], oracle[i], bin);
  }
}

TEST(HistogramMatch, DegenerateReference) {
  Rng rng(12);
  const auto res = histogram_match(rlt::random_image(4, 4, rng), Image(3, 3, 7.0), 16);
  EXPECT_TRUE(res.degenerate_reference);
  for (double p : res.image.pixels()) EXPECT_EQ(p, 7.0);
}

TEST(HistogramMatch, ErrorPaths) {
  EXPECT_THROW(histogram_match(Image(2, 2), Image(2, 2), 1), std::invalid_argument);
}

TEST(HistogramMatch, MonotoneAndWithinReferenceRange) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const Image src = rlt::random_image(16, 16, rng, -1.0, 3.0);
    Image ref = rlt::random_image(16, 12, rng, 0.0, 1.0);
    for (auto& v : ref.pixels()) v = v * v;  // skewed reference
    const auto res = histogram_match(src, ref, 32);
    const auto [lo, hi] = std::minmax_element(ref.pixels().begin(), ref.pixels().end());
    for (std::size_t i = 0; i < src.size(); ++i) {
      ASSERT_GE(res.image[i], *lo);
      ASSERT_LE(res.image[i], *hi);
      for (std::size_t j = 0; j < src.size(); ++j)
        if (src[i] < src[j]) ASSERT_LE(res.image[i], res.image[j]);
    }
  }
}

TEST(HistogramMatch, CdfWithinOneBinOverRandomPairs) {
  Rng rng(14);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int nbins : {16, 64, 256}) {
    for (int trial = 0; trial < 25; ++trial) {
      Image src = rlt::random_image(32, 32, rng, -2.0, 5.0);
      Image ref(32, 32);
      const double mu = 3.0 * n01(rng), sd = 0.5 + std::abs(n01(rng));
      for (auto& v : ref.pixels()) v = mu + sd * n01(rng);
      const auto res = histogram_match(src, ref, nbins);
      // the matcher's bins span source and reference together
      const auto [slo, shi] = std::minmax_element(src.pixels().begin(), src.pixels().end());
      const auto [rlo, rhi] = std::minmax_element(ref.pixels().begin(), ref.pixels().end());
      const double lo = std::min(*slo, *rlo), hi = std::max(*shi, *rhi);
      ASSERT_LE(histogram_cdf_distance(res.image, ref, nbins, lo, hi), 1.0 / nbins) << "nbins=" << nbins << " trial=" << trial;
    }
  }
}

TEST(CdfDistance, Oracles) {
  const Image a(4, 1, std::vector<double>{0, 1, 2, 3});
  EXPECT_EQ(ecdf_sup_distance(a, a), 0.0);
  EXPECT_EQ(histogram_cdf_distance(a, a, 8), 0.0);
  const Image b(4, 1, std::vector<double>{0, 0, 0, 3});
  EXPECT_DOUBLE_EQ(ecdf_sup_distance(a, b), 0.5);
  EXPECT_DOUBLE_EQ(histogram_cdf_distance(a, b, 3), 0.5);
}
