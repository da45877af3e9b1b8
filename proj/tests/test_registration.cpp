#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "repaint_lab/bspline.hpp"
#include "repaint_lab/phantom.hpp"
#include "repaint_lab/registration.hpp"
#include "test_helpers.hpp"

using namespace repaint_lab;

namespace {
double max_abs_rel(const std::vector<double>& a, const std::vector<double>& n) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - n[i]));
    den = std::max(den, std::abs(n[i]));
  }
  return num / den;
}

BSplineField random_field(std::size_t w, std::size_t h, double spacing, double amp, Rng& rng) {
  std::uniform_real_distribution<double> u(-amp, amp);
  auto f = BSplineField::covering(w, h, spacing);
  for (std::size_t k = 0; k < f.count(); ++k) f[k] = {u(rng), u(rng)};
  return f;
}

// Spline displacement at an arbitrary point, controls outside the grid read as zero.
Vec2 eval_at(const BSplineField& f, double px, double py) {
  const double sx = px / f.spacing(), sy = py / f.spacing();
  const double cx = std::floor(sx), cy = std::floor(sy);
  const auto wx = bspline_weights(sx - cx), wy = bspline_weights(sy - cy);
  Vec2 v;
  for (int m = 0; m < 4; ++m)
    for (int l = 0; l < 4; ++l) {
      const long i = static_cast<long>(cx) + l, j = static_cast<long>(cy) + m;
      if (i < 0 || j < 0 || i >= static_cast<long>(f.nx()) || j >= static_cast<long>(f.ny())) continue;
      v.x += wx[l] * wy[m] * f.at(i, j).x;
      v.y += wx[l] * wy[m] * f.at(i, j).y;
    }
  return v;
}
}  // namespace

TEST(BSpline, BasisPartitionOfUnity) {
  for (int k = 0; k <= 1000; ++k) {
    const double f = k / 1000.0 * 0.999999;
    const auto w = bspline_weights(f);
    const auto d = bspline_derivatives(f);
    ASSERT_NEAR(w[0] + w[1] + w[2] + w[3], 1.0, 1e-12);
    ASSERT_NEAR(d[0] + d[1] + d[2] + d[3], 0.0, 1e-12);
    for (double v : w) ASSERT_GE(v, 0.0);
  }
  const auto w0 = bspline_weights(0.0);
  EXPECT_DOUBLE_EQ(w0[1], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(w0[0], 1.0 / 6.0);
}

TEST(BSpline, GridCoversImage) {
  EXPECT_EQ(BSplineField::grid_extent(32, 2.5), 16u);
  EXPECT_EQ(BSplineField::grid_extent(1, 2.5), 4u);
  const auto f = BSplineField::covering(32, 20, 2.5);
  EXPECT_TRUE(f.covers(32, 20));
  EXPECT_FALSE(f.covers(48, 20));
  EXPECT_THROW(dense_displacement(f, 48, 20), std::invalid_argument);
  EXPECT_THROW(BSplineField::covering(8, 8, 0.0), std::invalid_argument);
}

TEST(DenseDisplacement, ZeroConstantAndSingleControl) {
  auto f = BSplineField::covering(16, 16, 2.5);
  for (auto& v : dense_displacement(f, 16, 16).u) ASSERT_EQ(v.x, 0.0);
  for (std::size_t k = 0; k < f.count(); ++k) f[k] = {0.7, -1.3};
  for (auto& v : dense_displacement(f, 16, 16).u) {
    ASSERT_NEAR(v.x, 0.7, 1e-10);
    ASSERT_NEAR(v.y, -1.3, 1e-10);
  }
  auto g = BSplineField::covering(16, 16, 2.5);
  g.at(3, 3) = {1.0, 0.0};  // sits on pixel (5, 5)
  EXPECT_DOUBLE_EQ(g.position(3, 3).x, 5.0);
  EXPECT_NEAR(dense_displacement(g, 16, 16)(5, 5).x, 4.0 / 9.0, 1e-12);
}

TEST(DenseDisplacement, ReproducesLinearFields) {
  auto f = BSplineField::covering(20, 14, 2.5);
  for (std::size_t j = 0; j < f.ny(); ++j)
    for (std::size_t i = 0; i < f.nx(); ++i) {
      const Vec2 p = f.position(i, j);
      f.at(i, j) = {0.1 * p.x - 0.05 * p.y + 0.3, 0.02 * p.x + 0.07 * p.y};
    }
  const auto d = dense_displacement(f, 20, 14);
  for (std::size_t y = 0; y < 14; ++y)
    for (std::size_t x = 0; x < 20; ++x) {
      ASSERT_NEAR(d(x, y).x, 0.1 * x - 0.05 * y + 0.3, 1e-12);
      ASSERT_NEAR(d(x, y).y, 0.02 * x + 0.07 * y, 1e-12);
    }
}

TEST(Warp, Examples) {
  Rng rng(70);
  const Image img = rlt::random_image(10, 8, rng);
  EXPECT_EQ(warp(img, BSplineField::covering(10, 8, 2.5)), img);
  auto shift = BSplineField::covering(10, 8, 2.5);
  for (std::size_t k = 0; k < shift.count(); ++k) shift[k] = {1.0, 0.0};
  const Image s = warp(img, shift);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x + 1 < 10; ++x) ASSERT_NEAR(s(x, y), img(x + 1, y), 1e-12);
  Image ramp(10, 8);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 10; ++x) ramp(x, y) = 0.3 * x + 0.1 * y;
  for (std::size_t k = 0; k < shift.count(); ++k) shift[k] = {0.5, 0.5};
  const Image r = warp(ramp, shift);
  for (std::size_t y = 0; y + 1 < 8; ++y)
    for (std::size_t x = 0; x + 1 < 10; ++x) ASSERT_NEAR(r(x, y), 0.3 * (x + 0.5) + 0.1 * (y + 0.5), 1e-12);
}

TEST(LogJacobian, ZeroTranslationAndScaling) {
  auto f = BSplineField::covering(24, 24, 2.5);
  auto lj = log_jacobian(f, 24, 24);
  for (double v : lj.log_det.pixels()) ASSERT_EQ(v, 0.0);
  for (std::size_t k = 0; k < f.count(); ++k) f[k] = {2.0, -1.5};
  lj = log_jacobian(f, 24, 24);
  for (double v : lj.log_det.pixels()) ASSERT_NEAR(v, 0.0, 1e-12);
  for (double s : {std::sqrt(2.0), 0.8, 1.1}) {
    for (std::size_t j = 0; j < f.ny(); ++j)
      for (std::size_t i = 0; i < f.nx(); ++i) {
        const Vec2 p = f.position(i, j);
        f.at(i, j) = {(s - 1) * (p.x - 11.5), (s - 1) * (p.y - 11.5)};
      }
    lj = log_jacobian(f, 24, 24);
    EXPECT_EQ(lj.fold_count(), 0u);
    for (double v : lj.log_det.pixels()) ASSERT_NEAR(v, 2 * std::log(s), 1e-10);
  }
  EXPECT_NEAR(2 * std::log(std::sqrt(2.0)), std::log(2.0), 1e-15);
}

TEST(LogJacobian, FoldingIsFlagged) {
  auto f = BSplineField::covering(24, 24, 2.5);
  for (std::size_t j = 0; j < f.ny(); ++j)
    for (std::size_t i = 0; i < f.nx(); ++i) f.at(i, j) = {-2.0 * f.position(i, j).x, 0.0};
  const auto lj = log_jacobian(f, 24, 24);
  EXPECT_EQ(lj.fold_count(), 24u * 24u);
  EXPECT_TRUE(std::isnan(lj.log_det[0]));
}

// For small fields log|J| of the composition is additive to first order.
TEST(LogJacobian, SmallFieldsComposeAdditively) {
  Rng rng(71);
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = smooth_random_field(24, 24, 2.5, 0.1, rng), b = smooth_random_field(24, 24, 2.5, 0.1, rng);
    auto sum = a;
    for (std::size_t k = 0; k < sum.count(); ++k) sum[k] = {a[k].x + b[k].x, a[k].y + b[k].y};
    const auto la = log_jacobian(a, 24, 24), lb = log_jacobian(b, 24, 24), ls = log_jacobian(sum, 24, 24);
    for (std::size_t i = 0; i < ls.log_det.size(); ++i) ASSERT_NEAR(ls.log_det[i], la.log_det[i] + lb.log_det[i], 1e-3);
  }
}

TEST(RegistrationCost, GradientMatchesFiniteDifferences) {
  Rng rng(72);
  for (double bending : {0.0, 0.5})
    for (double elastic : {0.0, 0.3})
      for (int trial = 0; trial < 4; ++trial) {
        const Image ref = gaussian_smooth(rlt::random_image(12, 10, rng), 1.0);
        const Image mov = gaussian_smooth(rlt::random_image(12, 10, rng), 1.0);
        RegParams p;
        p.bending_weight = bending;
        p.elasticity_weight = elastic;
        RegistrationCost cost(ref, mov, p);
        auto f = random_field(12, 10, 2.5, 0.8, rng);
        std::vector<Vec2> grad;
        cost.evaluate(f, &grad);
        std::vector<double> a, n;
        const double h = 1e-6;
        for (std::size_t k = 0; k < f.count(); ++k)
          for (int axis = 0; axis < 2; ++axis) {
            double& c = axis == 0 ? f[k].x : f[k].y;
            const double orig = c;
            c = orig + h;
            const double up = cost.evaluate(f, nullptr);
            c = orig - h;
            const double dn = cost.evaluate(f, nullptr);
            c = orig;
            n.push_back((up - dn) / (2 * h));
            a.push_back(axis == 0 ? grad[k].x : grad[k].y);
          }
        ASSERT_LT(max_abs_rel(a, n), 1e-4) << "bending=" << bending << " elastic=" << elastic;
      }
}

TEST(Register, IdenticalImagesStayPut) {
  Rng rng(73);
  const Image img = blob_texture(16, 16, 20, 2.0, rng);
  const auto res = register_images(img, img, RegParams{});
  EXPECT_EQ(res.final_ssd, 0.0);
  for (std::size_t k = 0; k < res.field.count(); ++k) {
    EXPECT_LE(std::abs(res.field[k].x), 1e-6);
    EXPECT_LE(std::abs(res.field[k].y), 1e-6);
  }
}

TEST(Register, CostTraceNeverIncreases) {
  Rng rng(74);
  const Image img = blob_texture(24, 24, 40, 2.0, rng);
  const Image mov = warp(img, smooth_random_field(24, 24, 2.5, 1.5, rng));
  RegParams p;
  p.max_iterations = 200;
  const auto res = register_images(img, mov, p);
  for (std::size_t i = 1; i < res.cost_trace.size(); ++i) ASSERT_LE(res.cost_trace[i], res.cost_trace[i - 1]);
  EXPECT_LT(res.final_ssd, res.initial_ssd);
}

// register(img, warp(img, g)) recovers the inverse displacement v = -g(x + v).
TEST(Register, RecoversInverseOfKnownField) {
  Rng rng(75);
  const Image img = blob_texture(32, 32, 80, 2.0, rng);
  const auto g = smooth_random_field(32, 32, 2.5, 1.5, rng);
  RegParams p;
  p.max_iterations = 2000;
  const auto res = register_images(img, warp(img, g), p);
  const auto u = dense_displacement(res.field, 32, 32);
  double epe = 0;
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) {
      Vec2 v;
      for (int it = 0; it < 200; ++it) {
        const Vec2 gv = eval_at(g, x + v.x, y + v.y);
        v = {-gv.x, -gv.y};
      }
      epe += std::hypot(u(x, y).x - v.x, u(x, y).y - v.y);
    }
  EXPECT_LT(epe / 1024, 0.5);
}

TEST(Register, ScalingRecoveryGivesUniformLogJacobian) {
  Rng rng(76);
  const Image img = blob_texture(32, 32, 80, 2.0, rng);
  const double s = 1.05;
  auto g = BSplineField::covering(32, 32, 2.5);
  for (std::size_t j = 0; j < g.ny(); ++j)
    for (std::size_t i = 0; i < g.nx(); ++i) {
      const Vec2 q = g.position(i, j);
      g.at(i, j) = {(s - 1) * (q.x - 15.5), (s - 1) * (q.y - 15.5)};
    }
  RegParams p;
  p.max_iterations = 2000;
  const auto res = register_images(warp(img, g), img, p);
  const auto lj = log_jacobian(res.field, 32, 32);
  double mean = 0;
  int n = 0;
  for (std::size_t y = 8; y < 24; ++y)
    for (std::size_t x = 8; x < 24; ++x) {
      mean += lj.log_det(x, y);
      ++n;
    }
  EXPECT_NEAR(mean / n, 2 * std::log(s), 1e-2);
}

TEST(Register, RejectsBadInput) {
  EXPECT_THROW(register_images(Image(4, 4), Image(4, 5), RegParams{}), DimensionError);
  RegParams p;
  p.levels = 2;
  EXPECT_THROW(register_images(Image(4, 4), Image(4, 4), p), std::invalid_argument);
  p = RegParams{};
  p.bending_weight = -1;
  EXPECT_THROW(register_images(Image(4, 4), Image(4, 4), p), std::invalid_argument);
  Image nan(4, 4, 0.0);
  nan[3] = std::nan("");
  EXPECT_THROW(register_images(Image(4, 4), nan, RegParams{}), RegistrationError);
}

TEST(FieldIo, RoundTripAndErrors) {
  Rng rng(77);
  auto f = random_field(20, 12, 2.5, 2.0, rng);
  for (std::size_t k = 0; k < f.count(); ++k) f[k] = {static_cast<float>(f[k].x), static_cast<float>(f[k].y)};
  std::stringstream ss;
  write_field(f, ss);
  EXPECT_EQ(ss.str().substr(0, 4), "BSPF");
  EXPECT_EQ(ss.str().size(), 16u + 8u * f.count());
  const auto g = read_field(ss);
  ASSERT_EQ(g.nx(), f.nx());
  ASSERT_EQ(g.ny(), f.ny());
  EXPECT_EQ(g.spacing(), 2.5);
  for (std::size_t k = 0; k < f.count(); ++k) {
    EXPECT_EQ(g[k].x, f[k].x);
    EXPECT_EQ(g[k].y, f[k].y);
  }
  std::stringstream bad("BSPX");
  EXPECT_THROW(read_field(bad), FieldIoError);
  std::stringstream full;
  write_field(f, full);
  std::stringstream cut(full.str().substr(0, 30));
  EXPECT_THROW(read_field(cut), FieldIoError);
}
