#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "repaint_lab/diffusion.hpp"
#include "repaint_lab/mlp_denoiser.hpp"

namespace repaint_lab {

struct TrainConfig {
  int epochs = 10;
  double lr = 1e-3;
  double lr_min = 0.0;
  /// Optimizer steps over which the cosine decays; lr stays at lr_min after.
  int horizon = 1000;
  int micro_batch = 2;
  int accumulation = 8;
  /// Optional cap on optimizer steps (0 = no cap).
  int max_steps = 0;
  std::string optimizer = "adam";  ///< "adam" or "sgd"
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1 || micro_batch < 1 || accumulation < 1 || horizon < 1 || max_steps < 0)
      throw std::invalid_argument("TrainConfig: epochs, micro_batch, accumulation, horizon must be positive");
    if (!(lr > 0.0) || lr_min < 0.0 || lr_min > lr) throw std::invalid_argument("TrainConfig: need 0 <= lr_min <= lr");
    if (optimizer != "adam" && optimizer != "sgd") throw std::invalid_argument("TrainConfig: optimizer must be adam|sgd");
  }
};

inline double cosine_lr(int step, double lr0, double lr_min, int horizon) {
  if (step >= horizon) return lr_min;
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * step / horizon));
}

struct LossRecord {
  int step;
  int epoch;
  double lr;
  double loss;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
struct Adam {
  std::vector<double> m, v;
  int t = 0;
  void apply(std::span<double> params, std::span<const double> grad, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    if (m.empty()) {
      m.assign(params.size(), 0.0);
      v.assign(params.size(), 0.0);
    }
    ++t;
    const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
      v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
      params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};
}  // namespace detail

/// Minimizes the simplified noise-prediction loss with gradient accumulation.
///
/// Every optimizer step consumes micro_batch * accumulation samples (cycling
/// through a per-epoch shuffle of `data`), each with a uniform t in [1,T] and
/// fresh Gaussian noise. Per-sample gradients are summed and divided once by
/// the sample count, so the split into micro-batches does not change results.
inline std::vector<LossRecord> train(MlpDenoiser& model, const std::vector<Image>& data, const TrainConfig& cfg,
                                     const NoiseSchedule& sched) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  for (auto& x : data)
    if (!x.same_shape(model.width(), model.height())) throw DimensionError("train: data image shape differs from model");

  Rng rng(cfg.seed);
  std::uniform_int_distribution<int> pick_t(1, sched.T());
  std::normal_distribution<double> n01(0.0, 1.0);
  detail::Adam adam;
  std::vector<double> grad(model.parameter_count());
  std::vector<LossRecord> trace;

  const int per_step = cfg.micro_batch * cfg.accumulation;
  const int steps_per_epoch = std::max(1, static_cast<int>((data.size() + per_step - 1) / per_step));
  std::vector<std::size_t> order(data.size());
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t cursor = 0;
    for (int s = 0; s < steps_per_epoch; ++s) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps) return trace;
      std::fill(grad.begin(), grad.end(), 0.0);
      long double loss_sum = 0.0L;
      for (int k = 0; k < per_step; ++k) {
        const Image& x0 = data[order[cursor % order.size()]];
        ++cursor;
        const int t = pick_t(rng);
        Image eps(x0.width(), x0.height());
        for (auto& v : eps.pixels()) v = n01(rng);
        loss_sum += model.loss_and_grad(forward_sample(x0, t, eps, sched), t, eps, grad);
      }
      const double loss = static_cast<double>(loss_sum / per_step);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "train: non-finite loss at step " << step << " (epoch " << epoch << ", lr "
            << cosine_lr(step, cfg.lr, cfg.lr_min, cfg.horizon) << ")";
        throw TrainingError(msg.str());
      }
      for (auto& g : grad) g /= per_step;
      const double lr = cosine_lr(step, cfg.lr, cfg.lr_min, cfg.horizon);
      if (cfg.optimizer == "adam") {
        adam.apply(model.parameters(), grad, lr);
      } else {
        auto p = model.parameters();
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * grad[i];
      }
      trace.push_back({step, epoch, lr, loss});
      ++step;
    }
  }
  return trace;
}

inline void write_loss_trace(const std::vector<LossRecord>& trace, std::ostream& os) {
  os << "step,lr,loss\n";
  os << std::setprecision(17);
  for (auto& r : trace) os << r.step << ',' << r.lr << ',' << r.loss << '\n';
}

/// Analytic gradient of simple_loss for one (x0, t, eps) at the current parameters.
inline std::vector<double> analytic_gradient(const MlpDenoiser& model, const Image& x0, int t, const Image& eps,
                                             const NoiseSchedule& sched) {
  std::vector<double> g(model.parameter_count(), 0.0);
  model.loss_and_grad(forward_sample(x0, t, eps, sched), t, eps, g);
  return g;
}

/// Central differences of simple_loss with respect to every parameter.
inline std::vector<double> numeric_gradient(MlpDenoiser model, const Image& x0, int t, const Image& eps,
                                            const NoiseSchedule& sched, double h) {
  auto p = model.parameters();
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    const double up = simple_loss(model, x0, t, eps, sched);
    p[i] = keep - h;
    const double down = simple_loss(model, x0, t, eps, sched);
    p[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - n_i| / (|a_i| + |n_i| + 1e-12), skipping entries where both
/// magnitudes are below 1e-12.
inline double relative_gradient_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw std::invalid_argument("relative_gradient_error: size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = std::abs(analytic[i]), n = std::abs(numeric[i]);
    if (a < 1e-12 && n < 1e-12) continue;
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / (a + n + 1e-12));
  }
  return worst;
}

inline double grad_check(const MlpDenoiser& model, const Image& x0, int t, const Image& eps,
                         const NoiseSchedule& sched, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: h must be positive");
  const auto a = analytic_gradient(model, x0, t, eps, sched);
  const auto n = numeric_gradient(model, x0, t, eps, sched, h);
  return relative_gradient_error(a, n);
}

}  // namespace repaint_lab
