#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "repaint_lab/diffusion.hpp"
#include "repaint_lab/image.hpp"

namespace repaint_lab {

/// Variance used when noising the known region to level t-1.
enum class KnownVariance {
  previous,  ///< 1 - abar_{t-1}, consistent with the forward marginal
  current,   ///< 1 - abar_t, as printed in some statements of the method
};

struct RepaintConfig {
  int jump_length = 10;
  int resamplings = 5;
  SigmaMode sigma_mode = SigmaMode::posterior;
  KnownVariance known_variance = KnownVariance::previous;
  std::uint64_t seed = 0;

  void validate(int T) const {
    if (jump_length < 1 || jump_length > T)
      throw std::invalid_argument("RepaintConfig: jump_length must lie in [1, T]");
    if (resamplings < 1) throw std::invalid_argument("RepaintConfig: resamplings must be >= 1");
  }
};

/// Signed timestep moves: -1 is a reverse (denoising) step, +1 a forward
/// re-noising step. Partial sums starting from T stay in [0, T] and end at 0.
using TimeTravelPlan = std::vector<std::int8_t>;

/// Descends from T to 0. Each time the descent lands on t > 0 with
/// t % j == 0, the plan inserts r - 1 round trips of j forward then j
/// reverse moves before continuing.
inline TimeTravelPlan build_plan(int T, int j, int r) {
  if (T < 1) throw std::invalid_argument("build_plan: T must be >= 1");
  if (j < 1 || j > T) throw std::invalid_argument("build_plan: jump length must lie in [1, T]");
  if (r < 1) throw std::invalid_argument("build_plan: resamplings must be >= 1");
  TimeTravelPlan plan;
  plan.reserve(static_cast<std::size_t>(T) * (1 + 2 * (r - 1)));
  for (int t = T; t > 0;) {
    plan.push_back(-1);
    --t;
    if (t > 0 && t % j == 0 && t + j <= T)
      for (int rep = 0; rep < r - 1; ++rep) {
        plan.insert(plan.end(), static_cast<std::size_t>(j), std::int8_t{1});
        plan.insert(plan.end(), static_cast<std::size_t>(j), std::int8_t{-1});
      }
  }
  return plan;
}

/// Draw of the known region at level t-1: N(sqrt(abar_{t-1}) I0, v I), with
/// v per `variance`. Level 0 returns I0 exactly under KnownVariance::previous.
inline Image known_sample(const Image& I0, int t_minus_1, const NoiseSchedule& sched, Rng& rng,
                          KnownVariance variance = KnownVariance::previous) {
  sched.check_timestep(t_minus_1, 0);
  const double a = std::sqrt(sched.alpha_bar(t_minus_1));
  const int var_index = variance == KnownVariance::previous ? t_minus_1 : std::min(t_minus_1 + 1, sched.T());
  const double s = std::sqrt(1.0 - sched.alpha_bar(var_index));
  if (s == 0.0 && a == 1.0) return I0;
  std::normal_distribution<double> n01(0.0, 1.0);
  Image out(I0.width(), I0.height());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * I0[i] + s * n01(rng);
  return out;
}

/// One masked reverse step. The known draw happens first, then the model's
/// reverse step; pixels with M = 1 come from the former, M = 0 from the latter.
inline Image repaint_step(const Image& I_t, int t, const Image& I0, const BinaryMask& M, const Denoiser& model,
                          const NoiseSchedule& sched, const RepaintConfig& cfg, Rng& rng) {
  detail::require_same_shape(I_t, I0, "repaint_step");
  detail::require_same_shape(I_t, M, "repaint_step");
  sched.check_timestep(t, 1);
  const Image known = known_sample(I0, t - 1, sched, rng, cfg.known_variance);
  const Image unknown = reverse_step(I_t, t, model, sched, cfg.sigma_mode, rng);
  return compose(unknown, known, M);
}

/// Masked-conditional sampling along build_plan(T, j, r) from x_T ~ N(0, I).
/// Forward moves re-noise the whole composed image. After reaching t = 0 the
/// known region is overwritten with I0, so output and I0 agree exactly there.
inline Image inpaint(const Image& I0, const BinaryMask& M, const Denoiser& model, const NoiseSchedule& sched,
                     const RepaintConfig& cfg, Rng& rng) {
  detail::require_same_shape(I0, M, "inpaint");
  cfg.validate(sched.T());
  const TimeTravelPlan plan = build_plan(sched.T(), cfg.jump_length, cfg.resamplings);
  Image x = standard_normal_image(I0.width(), I0.height(), rng);
  int t = sched.T();
  for (auto move : plan) {
    if (move < 0) {
      x = repaint_step(x, t, I0, M, model, sched, cfg, rng);
      --t;
    } else {
      ++t;
      x = forward_step(x, t, sched, rng);
    }
  }
  return compose(x, I0, M);
}

}  // namespace repaint_lab
