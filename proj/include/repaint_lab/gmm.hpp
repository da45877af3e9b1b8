#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "repaint_lab/diffusion.hpp"
#include "repaint_lab/image.hpp"

namespace repaint_lab {

/// One Gaussian in pixel space with covariance var * I + F F^T.
///
/// `factors` may be empty (isotropic component). Each factor is an image-shaped
/// column of F; a structured phantom population needs one per latent intensity.
struct GmmComponent {
  double weight = 1.0;
  Image mean;
  double var = 0.0;
  std::vector<Image> factors;
};

/// Known data distribution p(x0) that the analytic denoiser scores exactly.
class GmmDataModel {
 public:
  GmmDataModel() = default;
  explicit GmmDataModel(std::vector<GmmComponent> comps) : comps_(std::move(comps)) { validate(); }

  std::size_t size() const { return comps_.size(); }
  const GmmComponent& component(std::size_t k) const { return comps_[k]; }
  const std::vector<GmmComponent>& components() const { return comps_; }
  std::size_t width() const { return comps_.front().mean.width(); }
  std::size_t height() const { return comps_.front().mean.height(); }

  /// Mixture mean image, sum_k w_k mean_k.
  Image population_mean() const {
    Image out(width(), height(), 0.0);
    for (auto& c : comps_)
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += c.weight * c.mean[i];
    return out;
  }

  /// Log density of the time-t marginal, sum_k w_k N(sqrt(abar) mu_k, abar Sigma_k + (1 - abar) I).
  double log_marginal(const Image& x_t, double alpha_bar) const {
    std::vector<double> logs;
    for (std::size_t k = 0; k < comps_.size(); ++k) logs.push_back(component_term(k, x_t, alpha_bar, nullptr));
    const double mx = *std::max_element(logs.begin(), logs.end());
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double l : logs) s += std::exp(l - mx);
    return mx + std::log(s);
  }

  /// grad_x log p_t(x) with log-sum-exp stabilized responsibilities.
  Eigen::VectorXd score(const Image& x_t, double alpha_bar) const {
    const std::size_t P = x_t.size();
    std::vector<double> logs(comps_.size());
    std::vector<Eigen::VectorXd> scores(comps_.size());
    for (std::size_t k = 0; k < comps_.size(); ++k) {
      scores[k].resize(static_cast<Eigen::Index>(P));
      logs[k] = component_term(k, x_t, alpha_bar, &scores[k]);
    }
    const double mx = *std::max_element(logs.begin(), logs.end());
    double norm = 0.0;
    for (auto& l : logs) {
      l = std::exp(l - mx);
      norm += l;
    }
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(P));
    for (std::size_t k = 0; k < comps_.size(); ++k)
      if (logs[k] > 0.0) out += (logs[k] / norm) * scores[k];
    return out;
  }

 private:
  void validate() {
    if (comps_.empty()) throw std::invalid_argument("GmmDataModel: need at least one component");
    double wsum = 0.0;
    for (auto& c : comps_) {
      if (c.weight < 0.0) throw std::invalid_argument("GmmDataModel: negative weight");
      if (c.var < 0.0) throw std::invalid_argument("GmmDataModel: negative variance");
      if (!c.mean.same_shape(comps_.front().mean)) throw DimensionError("GmmDataModel: component means differ in shape");
      for (auto& f : c.factors)
        if (!f.same_shape(c.mean)) throw DimensionError("GmmDataModel: factor shape differs from mean");
      wsum += c.weight;
    }
    if (std::abs(wsum - 1.0) > 1e-12) throw std::invalid_argument("GmmDataModel: weights must sum to 1");

    gram_.clear();
    fmat_.clear();
    for (auto& c : comps_) {
      const auto P = static_cast<Eigen::Index>(c.mean.size());
      const auto R = static_cast<Eigen::Index>(c.factors.size());
      Eigen::MatrixXd F(P, R);
      for (Eigen::Index r = 0; r < R; ++r)
        for (Eigen::Index i = 0; i < P; ++i) F(i, r) = c.factors[r][i];
      gram_.push_back(F.transpose() * F);
      fmat_.push_back(std::move(F));
    }
  }

  // log(w_k N_k(x)) at time t; when `score` is given, also -Cov_k^{-1} d.
  double component_term(std::size_t k, const Image& x_t, double abar, Eigen::VectorXd* score) const {
    const auto& c = comps_[k];
    if (c.weight == 0.0) {
      if (score) score->setZero();
      return -std::numeric_limits<double>::infinity();
    }
    const auto P = static_cast<Eigen::Index>(x_t.size());
    const double sa = std::sqrt(abar);
    const double iso = abar * c.var + (1.0 - abar);
    if (!(iso > 0.0)) throw std::domain_error("GmmDataModel: singular marginal covariance at t=0");

    Eigen::VectorXd d(P);
    for (Eigen::Index i = 0; i < P; ++i) d(i) = x_t[i] - sa * c.mean[i];

    double quad = d.squaredNorm() / iso;
    double logdet = static_cast<double>(P) * std::log(iso);
    Eigen::VectorXd inv_d = d / iso;

    const auto& F = fmat_[k];
    if (F.cols() > 0) {
      // Woodbury with G = sqrt(abar) F: Cov = iso I + G G^T
      const Eigen::Index R = F.cols();
      Eigen::MatrixXd inner = Eigen::MatrixXd::Identity(R, R) * iso + abar * gram_[k];
      Eigen::LLT<Eigen::MatrixXd> llt(inner);
      const Eigen::VectorXd gtd = sa * (F.transpose() * d);
      const Eigen::VectorXd sol = llt.solve(gtd);
      quad -= gtd.dot(sol) / iso;
      const Eigen::MatrixXd L = llt.matrixL();
      double ld_inner = 0.0;
      for (Eigen::Index r = 0; r < R; ++r) ld_inner += 2.0 * std::log(L(r, r));
      logdet += ld_inner - static_cast<double>(R) * std::log(iso);
      inv_d -= (sa / iso) * (F * sol);
    }
    if (score) *score = -inv_d;
    return std::log(c.weight) - 0.5 * (static_cast<double>(P) * std::log(2.0 * std::numbers::pi) + logdet + quad);
  }

  std::vector<GmmComponent> comps_;
  std::vector<Eigen::MatrixXd> fmat_;
  std::vector<Eigen::MatrixXd> gram_;
};

/// Exact noise prediction for a mixture marginal: -sqrt(1 - abar_t) * score.
inline Image analytic_eps(const GmmDataModel& gmm, const Image& x_t, int t, const NoiseSchedule& sched) {
  sched.check_timestep(t, 1);
  if (!x_t.same_shape(gmm.width(), gmm.height())) throw DimensionError("analytic_eps: x_t shape differs from model");
  const double abar = sched.alpha_bar(t);
  const Eigen::VectorXd s = gmm.score(x_t, abar);
  const double scale = -std::sqrt(1.0 - abar);
  Image out(x_t.width(), x_t.height());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * s(static_cast<Eigen::Index>(i));
  return out;
}

class AnalyticDenoiser final : public Denoiser {
 public:
  explicit AnalyticDenoiser(GmmDataModel gmm) : gmm_(std::move(gmm)) {}
  Image predict_eps(const Image& x_t, int t, const NoiseSchedule& sched) const override {
    return analytic_eps(gmm_, x_t, t, sched);
  }
  const GmmDataModel& data_model() const { return gmm_; }

 private:
  GmmDataModel gmm_;
};

/// Isotropic single-Gaussian data model N(mean, var I).
inline GmmDataModel single_gaussian(const Image& mean, double var) {
  return GmmDataModel({GmmComponent{1.0, mean, var, {}}});
}

}  // namespace repaint_lab
