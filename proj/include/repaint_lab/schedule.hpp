#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace repaint_lab {

/// Fixed reverse-process variance choices.
enum class SigmaMode {
  posterior,  ///< beta_tilde_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t
  beta,       ///< beta_t
  zero,       ///< deterministic reverse chain
};

inline SigmaMode parse_sigma_mode(const std::string& s) {
  if (s == "tilde" || s == "posterior") return SigmaMode::posterior;
  if (s == "beta") return SigmaMode::beta;
  if (s == "zero") return SigmaMode::zero;
  throw std::invalid_argument("unknown sigma mode '" + s + "' (expected tilde|beta|zero)");
}

inline const char* to_string(SigmaMode m) {
  switch (m) {
    case SigmaMode::posterior: return "tilde";
    case SigmaMode::beta: return "beta";
    case SigmaMode::zero: return "zero";
  }
  return "?";
}

/// beta/alpha/alpha_bar for t = 1..T, with alpha_bar(0) = 1.
class NoiseSchedule {
 public:
  /// Builds from an explicit beta sequence (betas[0] is beta_1).
  explicit NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
    if (beta_.empty()) throw std::invalid_argument("NoiseSchedule: need T >= 1");
    alpha_bar_.resize(beta_.size() + 1);
    alpha_bar_[0] = 1.0;
    long double running = 1.0L;
    for (std::size_t i = 0; i < beta_.size(); ++i) {
      const double b = beta_[i];
      if (!(b > 0.0 && b < 1.0))
        throw std::invalid_argument("NoiseSchedule: beta_" + std::to_string(i + 1) + " = " + std::to_string(b) +
                                    " outside (0,1)");
      running *= (1.0L - static_cast<long double>(b));
      alpha_bar_[i + 1] = static_cast<double>(running);
    }
  }

  int T() const { return static_cast<int>(beta_.size()); }
  double beta(int t) const { return beta_.at(index(t)); }
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const {
    if (t < 0 || t > T()) throw std::out_of_range("NoiseSchedule: t=" + std::to_string(t) + " outside [0,T]");
    return alpha_bar_[t];
  }

  /// Fixed variance of p(x_{t-1} | x_t).
  double sigma2(int t, SigmaMode mode) const {
    switch (mode) {
      case SigmaMode::posterior:
        return (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t)) * beta(t);
      case SigmaMode::beta:
        return beta(t);
      case SigmaMode::zero:
        return 0.0;
    }
    return 0.0;
  }

  const std::vector<double>& betas() const { return beta_; }
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }

  void check_timestep(int t, int lo) const {
    if (t < lo || t > T())
      throw std::out_of_range("timestep " + std::to_string(t) + " outside [" + std::to_string(lo) + "," +
                              std::to_string(T()) + "]");
  }

 private:
  std::size_t index(int t) const {
    if (t < 1 || t > T()) throw std::out_of_range("NoiseSchedule: t=" + std::to_string(t) + " outside [1,T]");
    return static_cast<std::size_t>(t - 1);
  }

  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
};

inline NoiseSchedule make_linear_schedule(double beta_1, double beta_T, int T) {
  if (T < 1) throw std::invalid_argument("make_linear_schedule: T must be >= 1");
  if (!(beta_1 > 0.0 && beta_1 <= beta_T && beta_T < 1.0))
    throw std::invalid_argument("make_linear_schedule: need 0 < beta_1 <= beta_T < 1");
  std::vector<double> b(T);
  for (int i = 0; i < T; ++i) b[i] = T == 1 ? beta_1 : beta_1 + (beta_T - beta_1) * i / (T - 1);
  return NoiseSchedule(std::move(b));
}

/// alpha_bar_t = sigmoid(lambda_t) with the log signal-to-noise ratio lambda_t
/// falling linearly from `logsnr_max` at t=1 to `logsnr_min` at t=T. Steps are
/// evenly spread in log-SNR, so every noise scale gets the same resolution.
inline NoiseSchedule make_logsnr_schedule(int T, double logsnr_max = 10.0, double logsnr_min = -10.0) {
  if (T < 1) throw std::invalid_argument("make_logsnr_schedule: T must be >= 1");
  if (!(logsnr_max > logsnr_min)) throw std::invalid_argument("make_logsnr_schedule: need logsnr_max > logsnr_min");
  std::vector<double> b(T);
  double prev = 1.0;
  for (int i = 0; i < T; ++i) {
    const double lam = T == 1 ? logsnr_min : logsnr_max + (logsnr_min - logsnr_max) * i / (T - 1);
    const double abar = 1.0 / (1.0 + std::exp(-lam));
    b[i] = 1.0 - abar / prev;
    prev = abar;
  }
  return NoiseSchedule(std::move(b));
}

struct ScheduleConfig {
  std::string kind = "logsnr";  ///< "logsnr" or "linear"
  int timesteps = 100;
  double beta_1 = 1e-4;
  double beta_T = 0.02;
  double logsnr_max = 10.0;
  double logsnr_min = -10.0;
};

inline NoiseSchedule make_schedule(const ScheduleConfig& cfg) {
  if (cfg.kind == "linear") return make_linear_schedule(cfg.beta_1, cfg.beta_T, cfg.timesteps);
  if (cfg.kind == "logsnr") return make_logsnr_schedule(cfg.timesteps, cfg.logsnr_max, cfg.logsnr_min);
  throw std::invalid_argument("unknown schedule kind '" + cfg.kind + "' (expected linear|logsnr)");
}

}  // namespace repaint_lab
