#include <gtest/gtest.h>

#include "repaint_lab/image.hpp"
#include "test_helpers.hpp"

using namespace repaint_lab;
using rlt::random_image;
using rlt::random_mask;

namespace {
BinaryMask row(std::vector<std::uint8_t> bits) {
  const std::size_t n = bits.size();
  return BinaryMask(n, 1, std::move(bits));
}
}  // namespace

TEST(MaskAlgebra, TruthTable) {
  EXPECT_EQ(mask_and(row({1, 1, 0, 0}), row({1, 0, 1, 0})), row({1, 0, 0, 0}));
}

TEST(MaskAlgebra, IdentityAndComplementLaws) {
  Rng rng(1);
  const BinaryMask m = random_mask(7, 5, rng);
  EXPECT_EQ(mask_and(BinaryMask::ones(7, 5), m), m);
  EXPECT_EQ(mask_and(m, mask_complement(m)), BinaryMask::zeros(7, 5));
  EXPECT_EQ(mask_complement(mask_complement(m)), m);
  EXPECT_EQ(mask_complement(BinaryMask::ones(3, 3)), BinaryMask::zeros(3, 3));
  EXPECT_EQ(mask_complement(row({1, 0})), row({0, 1}));
}

TEST(MaskAlgebra, DimensionMismatchThrows) {
  EXPECT_THROW(mask_and(BinaryMask::ones(2, 2), BinaryMask::ones(2, 3)), DimensionError);
  EXPECT_THROW(apply_mask(Image(2, 2), BinaryMask::ones(3, 2)), DimensionError);
}

TEST(MaskAlgebra, AndIsCommutativeAssociativeIdempotent) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_mask(6, 4, rng), b = random_mask(6, 4, rng), c = random_mask(6, 4, rng);
    ASSERT_EQ(mask_and(a, b), mask_and(b, a));
    ASSERT_EQ(mask_and(mask_and(a, b), c), mask_and(a, mask_and(b, c)));
    ASSERT_EQ(mask_and(a, a), a);
  }
}

TEST(ApplyMask, Examples) {
  Rng rng(3);
  const Image img = random_image(4, 3, rng);
  EXPECT_EQ(apply_mask(img, BinaryMask::ones(4, 3)), img);
  EXPECT_EQ(apply_mask(img, BinaryMask::zeros(4, 3)), Image(4, 3, 0.0));
  EXPECT_EQ(apply_mask(Image(2, 1, std::vector<double>{2, 3}), row({1, 0})), Image(2, 1, std::vector<double>{2, 0}));
}

TEST(ApplyMask, Idempotent) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Image img = random_image(5, 5, rng, -3, 3);
    const BinaryMask m = random_mask(5, 5, rng);
    ASSERT_EQ(apply_mask(apply_mask(img, m), m), apply_mask(img, m));
  }
}

TEST(MirrorMask, Examples) {
  BinaryMask m(4, 2);
  m.set(0, 0, true);
  BinaryMask expected(4, 2);
  expected.set(3, 0, true);
  EXPECT_EQ(mirror_mask(m), expected);

  BinaryMask sym(4, 1, std::vector<std::uint8_t>{1, 0, 0, 1});
  EXPECT_EQ(mirror_mask(sym), sym);

  Rng rng(5);
  const auto r = random_mask(8, 6, rng);
  EXPECT_EQ(mirror_mask(mirror_mask(r)), r);
}

TEST(MirrorMask, OddWidthThrows) { EXPECT_THROW(mirror_mask(BinaryMask::ones(3, 2)), std::invalid_argument); }

// I_hat o (1 - M) + I o M: I where M = 1, I_hat where M = 0, bit for bit.
TEST(Compose, CompositionIdentityIsExact) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const Image I = random_image(6, 6, rng, -1e3, 1e3);
    const Image G = random_image(6, 6, rng, -1e-3, 1e-3);
    const BinaryMask M = random_mask(6, 6, rng);
    const Image out = compose(G, I, M);
    for (std::size_t i = 0; i < out.size(); ++i) ASSERT_EQ(out[i], M[i] ? I[i] : G[i]);
  }
}

TEST(Atlas, RejectsOverlappingSides) {
  StructureAtlas atlas(4, 1);
  atlas.add("s", Side::left, row({1, 1, 0, 0}));
  EXPECT_THROW(atlas.add("s", Side::right, row({0, 1, 1, 0})), std::invalid_argument);
  EXPECT_THROW(atlas.at("missing", Side::left), std::out_of_range);
}

TEST(Image, RejectsBadConstruction) {
  EXPECT_THROW(Image(0, 3), std::invalid_argument);
  EXPECT_THROW(Image(2, 2, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(BinaryMask(2, 1, std::vector<std::uint8_t>{0, 2}), std::invalid_argument);
}

TEST(Smoothing, PreservesConstantsAndMass) {
  const Image flat(9, 7, 0.25);
  const Image s = gaussian_smooth(flat, 1.2);
  for (double v : s.pixels()) EXPECT_NEAR(v, 0.25, 1e-15);
  EXPECT_EQ(gaussian_smooth(flat, 0.0), flat);
}
