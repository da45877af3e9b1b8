#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <utility>

#include "repaint_lab/gmm.hpp"
#include "repaint_lab/trainer.hpp"
#include "test_helpers.hpp"

using namespace repaint_lab;

namespace {
MlpDenoiser small_net(std::uint64_t seed, std::size_t w = 3, std::size_t h = 2, std::size_t hidden = 5,
                      std::size_t embed = 4) {
  MlpDenoiser net(w, h, hidden, embed);
  Rng rng(seed);
  net.initialize(rng);
  return net;
}

std::vector<Image> two_cluster_dataset(std::size_t w, int n, Rng& rng) {
  Image a(w, w, 0.1), b(w, w, 0.1);
  for (std::size_t y = 2; y + 2 < w; ++y)
    for (std::size_t x = 1; x < 3; ++x) {
      a(x, y) = a(w - 1 - x, y) = 0.8;
      b(x, y) = b(w - 1 - x, y) = 0.4;
    }
  std::normal_distribution<double> n01;
  std::vector<Image> data;
  for (int k = 0; k < n; ++k) {
    Image x = k % 2 ? a : b;
    for (auto& v : x.pixels()) v += 0.1 * n01(rng);
    data.push_back(std::move(x));
  }
  return data;
}
}  // namespace

TEST(CosineLr, Endpoints) {
  EXPECT_EQ(cosine_lr(0, 1e-3, 1e-5, 500), 1e-3);
  EXPECT_EQ(cosine_lr(500, 1e-3, 1e-5, 500), 1e-5);
  EXPECT_EQ(cosine_lr(900, 1e-3, 1e-5, 500), 1e-5);
  EXPECT_DOUBLE_EQ(cosine_lr(250, 1e-3, 0.0, 500), 5e-4);
  for (int s = 1; s <= 500; ++s) ASSERT_LE(cosine_lr(s, 1e-3, 1e-5, 500), cosine_lr(s - 1, 1e-3, 1e-5, 500));
}

TEST(GradCheck, AnalyticMatchesCentralDifferences) {
  const auto sched = make_logsnr_schedule(100);
  Rng rng(80);
  double worst = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto net = small_net(trial);
    const Image x0 = rlt::random_image(3, 2, rng);
    const Image eps = standard_normal_image(3, 2, rng);
    const int t = 1 + 11 * trial;
    worst = std::max(worst, grad_check(net, x0, t, eps, sched, 1e-4));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(GradCheck, ScaledGradientGivesOneThird) {
  const auto sched = make_logsnr_schedule(100);
  Rng rng(81);
  const auto net = small_net(3);
  const Image x0 = rlt::random_image(3, 2, rng), eps = standard_normal_image(3, 2, rng);
  auto a = analytic_gradient(net, x0, 40, eps, sched);
  for (auto& g : a) g *= 2;
  const auto n = numeric_gradient(net, x0, 40, eps, sched, 1e-4);
  EXPECT_NEAR(relative_gradient_error(a, n), 1.0 / 3.0, 1e-4);
}

TEST(GradCheck, TinyEntriesAreSkipped) {
  EXPECT_EQ(relative_gradient_error(std::vector<double>{1e-13, 1.0}, std::vector<double>{-5e-13, 1.0}), 0.0);
  EXPECT_NEAR(relative_gradient_error(std::vector<double>{0.0, 1.0}, std::vector<double>{1e-6, 1.0}), 1.0, 1e-5);
  EXPECT_THROW(grad_check(small_net(1), Image(3, 2), 1, Image(3, 2), make_logsnr_schedule(10), 0.0), std::invalid_argument);
}

TEST(Mlp, LossMatchesSimpleLoss) {
  const auto sched = make_logsnr_schedule(50);
  Rng rng(82);
  const auto net = small_net(4);
  const Image x0 = rlt::random_image(3, 2, rng), eps = standard_normal_image(3, 2, rng);
  std::vector<double> g(net.parameter_count(), 0.0);
  EXPECT_NEAR(net.loss_and_grad(forward_sample(x0, 20, eps, sched), 20, eps, g), simple_loss(net, x0, 20, eps, sched), 1e-14);
  EXPECT_THROW(net.predict_eps(Image(2, 2), 1, sched), DimensionError);
  EXPECT_THROW(MlpDenoiser(3, 2, 4, 3), std::invalid_argument);
}

// One update over a micro-batches equals one update over their concatenation.
TEST(Train, AccumulationMatchesLargeBatch) {
  const auto sched = make_logsnr_schedule(100);
  Rng rng(83);
  const auto data = two_cluster_dataset(4, 32, rng);
  TrainConfig a;
  a.epochs = 2;
  a.micro_batch = 2;
  a.accumulation = 8;
  a.seed = 9;
  TrainConfig b = a;
  b.micro_batch = 16;
  b.accumulation = 1;
  auto na = small_net(5, 4, 4, 8, 4), nb = small_net(5, 4, 4, 8, 4);
  const auto ta = train(na, data, a, sched), tb = train(nb, data, b, sched);
  ASSERT_EQ(ta.size(), tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) EXPECT_EQ(ta[i].loss, tb[i].loss);
  const auto pa = std::as_const(na).parameters();
  const auto pb = std::as_const(nb).parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) ASSERT_EQ(pa[i], pb[i]);
}

TEST(Train, TraceFollowsCosineAndIsDeterministic) {
  const auto sched = make_logsnr_schedule(100);
  Rng rng(84);
  const auto data = two_cluster_dataset(4, 32, rng);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.horizon = 5;
  cfg.lr_min = 1e-4;
  auto n1 = small_net(6, 4, 4, 8, 4), n2 = small_net(6, 4, 4, 8, 4);
  const auto t1 = train(n1, data, cfg, sched), t2 = train(n2, data, cfg, sched);
  ASSERT_EQ(t1.size(), 6u);
  for (std::size_t i = 0; i < t1.size(); ++i) {
    EXPECT_EQ(t1[i].lr, cosine_lr(static_cast<int>(i), cfg.lr, cfg.lr_min, cfg.horizon));
    EXPECT_EQ(t1[i].loss, t2[i].loss);
  }
  EXPECT_EQ(t1.front().lr, cfg.lr);
  EXPECT_EQ(t1.back().lr, cfg.lr_min);
  std::ostringstream os;
  write_loss_trace(t1, os);
  EXPECT_EQ(os.str().substr(0, 13), "step,lr,loss\n");
}

TEST(Train, RejectsBadConfigAndAbortsOnNonFiniteLoss) {
  const auto sched = make_logsnr_schedule(10);
  auto net = small_net(7, 4, 4, 8, 4);
  TrainConfig cfg;
  cfg.accumulation = 0;
  EXPECT_THROW(train(net, {Image(4, 4)}, cfg, sched), std::invalid_argument);
  EXPECT_THROW(train(net, {}, TrainConfig{}, sched), std::invalid_argument);
  EXPECT_THROW(train(net, {Image(3, 4)}, TrainConfig{}, sched), DimensionError);
  Image bad(4, 4, 0.0);
  bad[0] = std::nan("");
  EXPECT_THROW(train(net, {bad}, TrainConfig{}, sched), TrainingError);
}

TEST(Train, HalvesLossOnTwoComponentData) {
  const auto sched = make_logsnr_schedule(100);
  Rng rng(85);
  const auto data = two_cluster_dataset(8, 256, rng);
  auto net = small_net(8, 8, 8, 64, 16);
  TrainConfig cfg;
  cfg.epochs = 1000;
  cfg.max_steps = 2000;
  cfg.horizon = 2000;
  cfg.seed = 10;
  const auto trace = train(net, data, cfg, sched);
  const std::size_t spe = 16;
  double first = 0, last = 0;
  for (std::size_t i = 0; i < spe; ++i) {
    first += trace[i].loss / spe;
    last += trace[trace.size() - 1 - i].loss / spe;
  }
  EXPECT_LE(last, 0.5 * first);
}

TEST(Checkpoint, RoundTripAtFloatPrecision) {
  auto net = small_net(9, 4, 3, 6, 4);
  for (auto& p : net.parameters()) p = static_cast<float>(p);
  std::stringstream ss;
  write_checkpoint(net, ss);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 4), "DNSR");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes.size(), 5u + 16u + 4u * net.parameter_count());
  const auto back = read_checkpoint(ss);
  EXPECT_EQ(back.hidden(), 6u);
  const auto a = std::as_const(net).parameters();
  const auto b = back.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]);

  std::stringstream wrong("DNSX");
  EXPECT_THROW(read_checkpoint(wrong), CheckpointError);
  std::string v2 = bytes;
  v2[4] = 2;
  std::stringstream sv(v2);
  EXPECT_THROW(read_checkpoint(sv), CheckpointError);
  std::stringstream cut(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_checkpoint(cut), CheckpointError);
}
