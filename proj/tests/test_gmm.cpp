#include <gtest/gtest.h>

#include <cmath>

#include "repaint_lab/gmm.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

using namespace repaint_lab;

using namespace rlt;

TEST(AnalyticEps, PointMassClosedForm) {
  auto s = make_linear_schedule(1e-4, 0.02, 100);
  Rng rng(40);
  const Image mu = rlt::random_image(3, 3, rng);
  const auto g = single_gaussian(mu, 0.0);
  for (int t : {1, 37, 100}) {
    const Image x = rlt::random_image(3, 3, rng, -2, 2);
    const Image e = analytic_eps(g, x, t, s);
    for (std::size_t i = 0; i < 9; ++i)
      EXPECT_NEAR(e[i], (x[i] - std::sqrt(s.alpha_bar(t)) * mu[i]) / std::sqrt(1 - s.alpha_bar(t)), 1e-9);
  }
}

TEST(AnalyticEps, MidpointOfSymmetricPairHasNoAxialComponent) {
  auto s = make_linear_schedule(1e-4, 0.02, 100);
  const Image a(2, 1, std::vector<double>{1.0, 0.5}), b(2, 1, std::vector<double>{-1.0, 0.5});
  GmmDataModel g({GmmComponent{0.5, a, 0.1, {}}, GmmComponent{0.5, b, 0.1, {}}});
  for (int t : {1, 50, 100}) {
    const Image mid(2, 1, std::vector<double>{0.0, 0.1});
    EXPECT_NEAR(analytic_eps(g, mid, t, s)[0], 0.0, 1e-15);
  }
}

TEST(AnalyticEps, MatchesFiniteDifferenceScore) {
  auto s = make_logsnr_schedule(100);
  Rng rng(41);
  std::uniform_int_distribution<int> tt(1, 100);
  double worst = 0;
  for (int K : {1, 2, 3})
    for (int factors : {0, 2})
      for (int trial = 0; trial < 100; ++trial) {
        const auto g = random_mixture(K, 3, 3, rng, factors);
        const int t = tt(rng);
        const Image x = forward_sample(g.component(trial % K).mean, t, standard_normal_image(3, 3, rng), s);
        const double err = rel_err(analytic_eps(g, x, t, s), fd_eps(g, x, t, s));
        worst = std::max(worst, err);
        ASSERT_LE(err, 1e-5) << "K=" << K << " t=" << t;
      }
  RecordProperty("worst_rel_err", std::to_string(worst));
}

TEST(AnalyticEps, LogMarginalMatchesDenseOracle) {
  auto s = make_logsnr_schedule(50);
  Rng rng(42);
  for (int trial = 0; trial < 30; ++trial) {
    const auto g = random_mixture(1 + trial % 3, 4, 2, rng, trial % 4);
    const Image x = rlt::random_image(4, 2, rng, -2, 2);
    const int t = 1 + trial;
    VecL v(8);
    for (int i = 0; i < 8; ++i) v(i) = x[i];
    EXPECT_NEAR(g.log_marginal(x, s.alpha_bar(t)), static_cast<double>(dense_log_marginal(g, v, s.alpha_bar(t))), 1e-9);
  }
}

TEST(AnalyticEps, FarFromAllComponentsStaysFinite) {
  auto s = make_logsnr_schedule(100);
  Rng rng(43);
  const auto g = random_mixture(3, 4, 4, rng, 1);
  const Image far(4, 4, 1e3);
  const Image e = analytic_eps(g, far, 1, s);
  EXPECT_TRUE(e.all_finite());
}

TEST(GmmDataModel, Validation) {
  const Image m(2, 2, 0.0);
  EXPECT_THROW(GmmDataModel({GmmComponent{0.6, m, 0.1, {}}, GmmComponent{0.6, m, 0.1, {}}}), std::invalid_argument);
  EXPECT_THROW(GmmDataModel({GmmComponent{1.0, m, -0.1, {}}}), std::invalid_argument);
  EXPECT_THROW(GmmDataModel({GmmComponent{0.5, m, 0.1, {}}, GmmComponent{0.5, Image(3, 2), 0.1, {}}}), DimensionError);
  EXPECT_THROW(GmmDataModel(std::vector<GmmComponent>{}), std::invalid_argument);
  EXPECT_NO_THROW(GmmDataModel({GmmComponent{0.5 + 5e-13, m, 0.0, {}}, GmmComponent{0.5, m, 0.0, {}}}));
}

// Reverse chain from pure noise reproduces the data moments.
TEST(ReverseChain, SingleGaussianMean) {
  const auto sched = make_logsnr_schedule(1000);
  Image mu(2, 2, std::vector<double>{0.2, -0.4, 0.6, 0.0});
  AnalyticDenoiser model(single_gaussian(mu, 0.04));
  Rng rng(44);
  const int n = 500;
  std::vector<std::vector<double>> px(4, std::vector<double>(n));
  for (int k = 0; k < n; ++k) {
    const Image x = sample_unconditional(2, 2, model, sched, SigmaMode::posterior, rng);
    for (int i = 0; i < 4; ++i) px[i][k] = x[i];
  }
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(rlt::mean_of(px[i]), mu[i], 3 * std::sqrt(0.04 / n));
}
