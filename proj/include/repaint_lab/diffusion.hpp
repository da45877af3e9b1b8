#pragma once

#include <cmath>
#include <random>

#include "repaint_lab/image.hpp"
#include "repaint_lab/rng.hpp"
#include "repaint_lab/schedule.hpp"

namespace repaint_lab {

/// Noise predictor eps_hat(x_t, t). Implementations must be deterministic and
/// return an image shaped like x_t.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Image predict_eps(const Image& x_t, int t, const NoiseSchedule& sched) const = 0;
};

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
inline Image forward_sample(const Image& x0, int t, const Image& eps, const NoiseSchedule& sched) {
  detail::require_same_shape(x0, eps, "forward_sample");
  sched.check_timestep(t, 0);
  if (t == 0) return x0;
  const double a = std::sqrt(sched.alpha_bar(t));
  const double s = std::sqrt(1.0 - sched.alpha_bar(t));
  Image out(x0.width(), x0.height());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + s * eps[i];
  return out;
}

/// One draw from q(x_t | x_{t-1}) = N(sqrt(1 - beta_t) x_{t-1}, beta_t I).
inline Image forward_step(const Image& x_prev, int t, const NoiseSchedule& sched, Rng& rng) {
  sched.check_timestep(t, 1);
  const double a = std::sqrt(1.0 - sched.beta(t));
  const double s = std::sqrt(sched.beta(t));
  std::normal_distribution<double> n01(0.0, 1.0);
  Image out(x_prev.width(), x_prev.height());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x_prev[i] + s * n01(rng);
  return out;
}

/// Mean of p(x_{t-1} | x_t) under the noise parameterization:
/// (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t).
inline Image posterior_mean(const Image& x_t, int t, const Image& eps_hat, const NoiseSchedule& sched) {
  detail::require_same_shape(x_t, eps_hat, "posterior_mean");
  sched.check_timestep(t, 1);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
  const double coef = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
  Image out(x_t.width(), x_t.height());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = inv_sqrt_alpha * (x_t[i] - coef * eps_hat[i]);
  return out;
}

/// Ancestral step x_t -> x_{t-1}. At t = 1 the mean is returned without noise.
inline Image reverse_step(const Image& x_t, int t, const Denoiser& model, const NoiseSchedule& sched, SigmaMode mode,
                          Rng& rng) {
  sched.check_timestep(t, 1);
  Image mean = posterior_mean(x_t, t, model.predict_eps(x_t, t, sched), sched);
  if (t == 1) return mean;
  const double sigma = std::sqrt(sched.sigma2(t, mode));
  if (sigma == 0.0) return mean;
  std::normal_distribution<double> n01(0.0, 1.0);
  for (auto& v : mean.pixels()) v += sigma * n01(rng);
  return mean;
}

/// Full unconditional reverse chain from x_T ~ N(0, I).
inline Image sample_unconditional(std::size_t width, std::size_t height, const Denoiser& model,
                                  const NoiseSchedule& sched, SigmaMode mode, Rng& rng) {
  Image x = standard_normal_image(width, height, rng);
  for (int t = sched.T(); t >= 1; --t) x = reverse_step(x, t, model, sched, mode, rng);
  return x;
}

/// Per-pixel mean of (eps - eps_hat(forward_sample(x0, t, eps), t))^2.
inline double simple_loss(const Denoiser& model, const Image& x0, int t, const Image& eps,
                          const NoiseSchedule& sched) {
  sched.check_timestep(t, 1);
  const Image pred = model.predict_eps(forward_sample(x0, t, eps, sched), t, sched);
  long double acc = 0.0L;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const long double d = eps[i] - pred[i];
    acc += d * d;
  }
  return static_cast<double>(acc / eps.size());
}

/// Predicts zero noise everywhere; the reference point for the loss.
class ZeroDenoiser final : public Denoiser {
 public:
  Image predict_eps(const Image& x_t, int, const NoiseSchedule&) const override {
    return Image(x_t.width(), x_t.height(), 0.0);
  }
};

}  // namespace repaint_lab
