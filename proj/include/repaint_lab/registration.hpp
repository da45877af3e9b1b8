#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "repaint_lab/bspline.hpp"
#include "repaint_lab/image.hpp"

namespace repaint_lab {

struct RegParams {
  double spacing = 2.5;
  int max_iterations = 500;
  /// First trial step: the largest control-point change, in pixels.
  double initial_step = 0.5;
  /// Step multiplier after an accepted iteration.
  double step_growth = 1.5;
  int max_halvings = 20;
  /// Stop once an accepted step lowers the cost by less than this fraction.
  double tolerance = 1e-6;
  double bending_weight = 0.0;
  double elasticity_weight = 0.0;
  int levels = 1;

  void validate() const {
    if (!(spacing > 0.0)) throw std::invalid_argument("RegParams: spacing must be positive");
    if (max_iterations < 0 || max_halvings < 0) throw std::invalid_argument("RegParams: negative iteration budget");
    if (!(initial_step > 0.0) || step_growth < 1.0) throw std::invalid_argument("RegParams: bad step schedule");
    if (tolerance < 0.0) throw std::invalid_argument("RegParams: negative tolerance");
    if (bending_weight < 0.0 || elasticity_weight < 0.0) throw std::invalid_argument("RegParams: negative regularization weight");
    if (levels < 1) throw std::invalid_argument("RegParams: levels must be >= 1");
    if (levels > 1) throw std::invalid_argument("RegParams: multi-level pyramids are not supported");
  }
};

class RegistrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// SSD between a fixed reference and a moving image resampled through a
/// B-spline field, sum_x (reference(x) - moving(x + u(x)))^2, plus optional
/// quadratic control-grid penalties.
class RegistrationCost {
 public:
  RegistrationCost(const Image& reference, const Image& moving, const RegParams& params)
      : ref_(reference),
        mov_(moving),
        params_(params),
        bx_(reference.width(), params.spacing),
        by_(reference.height(), params.spacing) {
    detail::require_same_shape(reference, moving, "register");
    if (reference.width() < 2 || reference.height() < 2)
      throw std::invalid_argument("register: images must be at least 2x2");
  }

  BSplineField initial_field() const { return BSplineField::covering(ref_.width(), ref_.height(), params_.spacing); }

  double ssd(const BSplineField& f) const { return data_term(f, nullptr); }

  /// Penalized cost; when `grad` is non-null it receives d(cost)/d(control).
  double evaluate(const BSplineField& f, std::vector<Vec2>* grad) const {
    if (grad) grad->assign(f.count(), Vec2{});
    double cost = data_term(f, grad);
    if (params_.bending_weight > 0.0) cost += params_.bending_weight * bending(f, grad, params_.bending_weight);
    if (params_.elasticity_weight > 0.0) cost += params_.elasticity_weight * elasticity(f, grad, params_.elasticity_weight);
    return cost;
  }

  double data_term(const BSplineField& f, std::vector<Vec2>* grad) const {
    const std::size_t w = ref_.width(), h = ref_.height();
    double total = 0.0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        Vec2 u;
        for (int m = 0; m < 4; ++m)
          for (int l = 0; l < 4; ++l) {
            const double wgt = bx_.w[x][l] * by_.w[y][m];
            const Vec2& c = f.at(bx_.first[x] + l, by_.first[y] + m);
            u.x += wgt * c.x;
            u.y += wgt * c.y;
          }
        double gx = 0.0, gy = 0.0;
        const double mv = sample_bilinear_grad(mov_, static_cast<double>(x) + u.x, static_cast<double>(y) + u.y, gx, gy);
        const double r = ref_(x, y) - mv;
        total += r * r;
        if (grad) {
          const double sx = -2.0 * r * gx, sy = -2.0 * r * gy;
          if (sx == 0.0 && sy == 0.0) continue;
          for (int m = 0; m < 4; ++m)
            for (int l = 0; l < 4; ++l) {
              const double wgt = bx_.w[x][l] * by_.w[y][m];
              Vec2& g = (*grad)[(by_.first[y] + m) * f.nx() + bx_.first[x] + l];
              g.x += wgt * sx;
              g.y += wgt * sy;
            }
        }
      }
    return total;
  }

 private:
  // Discrete bending energy on the control grid (second differences),
  // normalized by control count and spacing^4.
  double bending(const BSplineField& f, std::vector<Vec2>* grad, double weight) const {
    const double norm = 1.0 / (static_cast<double>(f.count()) * std::pow(params_.spacing, 4));
    double e = 0.0;
    auto add = [&](std::initializer_list<std::pair<std::size_t, double>> terms, double mult) {
      Vec2 r;
      for (auto& [k, c] : terms) {
        r.x += c * f[k].x;
        r.y += c * f[k].y;
      }
      e += mult * (r.x * r.x + r.y * r.y);
      if (grad)
        for (auto& [k, c] : terms) {
          (*grad)[k].x += weight * norm * 2.0 * mult * c * r.x;
          (*grad)[k].y += weight * norm * 2.0 * mult * c * r.y;
        }
    };
    const std::size_t nx = f.nx(), ny = f.ny();
    auto id = [nx](std::size_t i, std::size_t j) { return j * nx + i; };
    for (std::size_t j = 0; j < ny; ++j)
      for (std::size_t i = 0; i < nx; ++i) {
        if (i > 0 && i + 1 < nx) add({{id(i - 1, j), 1.0}, {id(i, j), -2.0}, {id(i + 1, j), 1.0}}, 1.0);
        if (j > 0 && j + 1 < ny) add({{id(i, j - 1), 1.0}, {id(i, j), -2.0}, {id(i, j + 1), 1.0}}, 1.0);
        if (i + 1 < nx && j + 1 < ny)
          add({{id(i + 1, j + 1), 1.0}, {id(i + 1, j), -1.0}, {id(i, j + 1), -1.0}, {id(i, j), 1.0}}, 2.0);
      }
    return e * norm;
  }

  // Discrete linear-elastic energy: squared symmetric strain from forward
  // differences, normalized by control count and spacing^2.
  double elasticity(const BSplineField& f, std::vector<Vec2>* grad, double weight) const {
    const double norm = 1.0 / (static_cast<double>(f.count()) * params_.spacing * params_.spacing);
    const std::size_t nx = f.nx(), ny = f.ny();
    auto id = [nx](std::size_t i, std::size_t j) { return j * nx + i; };
    double e = 0.0;
    for (std::size_t j = 0; j + 1 < ny; ++j)
      for (std::size_t i = 0; i + 1 < nx; ++i) {
        const std::size_t k = id(i, j), kx = id(i + 1, j), ky = id(i, j + 1);
        const double exx = f[kx].x - f[k].x;
        const double eyy = f[ky].y - f[k].y;
        const double exy = 0.5 * ((f[ky].x - f[k].x) + (f[kx].y - f[k].y));
        e += exx * exx + eyy * eyy + 2.0 * exy * exy;
        if (grad) {
          const double s = weight * norm * 2.0;
          (*grad)[kx].x += s * exx;
          (*grad)[k].x -= s * exx;
          (*grad)[ky].y += s * eyy;
          (*grad)[k].y -= s * eyy;
          // d(2 exy^2) = 4 exy d(exy), d(exy) = 1/2 per touched entry
          (*grad)[ky].x += s * exy;
          (*grad)[k].x -= s * exy;
          (*grad)[kx].y += s * exy;
          (*grad)[k].y -= s * exy;
        }
      }
    return e * norm;
  }

  const Image& ref_;
  const Image& mov_;
  RegParams params_;
  detail::AxisBasis bx_, by_;
};

struct RegistrationResult {
  BSplineField field;
  double initial_ssd = 0.0;
  double final_ssd = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  /// Penalized cost after each accepted iteration, starting with the initial cost.
  std::vector<double> cost_trace;
  bool converged = false;
};

/// Steepest descent on the control displacements with backtracking: the
/// trial step moves the largest control by `step` pixels along the negative
/// gradient and is halved until the cost decreases (at most max_halvings
/// times). Accepted steps grow the next trial step by step_growth.
inline RegistrationResult register_images(const Image& reference, const Image& moving, const RegParams& params) {
  params.validate();
  RegistrationCost cost(reference, moving, params);
  RegistrationResult res;
  res.field = cost.initial_field();
  std::vector<Vec2> grad;
  double current = cost.evaluate(res.field, &grad);
  if (!std::isfinite(current)) throw RegistrationError("register: non-finite initial cost");
  res.initial_ssd = cost.ssd(res.field);
  res.cost_trace.push_back(current);

  double step = params.initial_step;
  for (int iter = 0; iter < params.max_iterations; ++iter) {
    if (current == 0.0) {
      res.converged = true;
      break;
    }
    double gmax = 0.0;
    for (auto& g : grad) gmax = std::max({gmax, std::abs(g.x), std::abs(g.y)});
    if (gmax == 0.0) {
      res.converged = true;
      break;
    }
    bool accepted = false;
    BSplineField trial = res.field;
    double trial_cost = current;
    for (int halving = 0; halving <= params.max_halvings; ++halving) {
      const double scale = step / gmax;
      for (std::size_t k = 0; k < trial.count(); ++k) {
        trial[k].x = res.field[k].x - scale * grad[k].x;
        trial[k].y = res.field[k].y - scale * grad[k].y;
      }
      trial_cost = cost.evaluate(trial, nullptr);
      if (!std::isfinite(trial_cost))
        throw RegistrationError("register: non-finite cost at iteration " + std::to_string(iter));
      if (trial_cost < current) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      res.converged = true;
      break;
    }
    const double decrease = (current - trial_cost) / current;
    res.field = std::move(trial);
    current = cost.evaluate(res.field, &grad);
    res.cost_trace.push_back(current);
    res.iterations = iter + 1;
    step *= params.step_growth;
    if (decrease < params.tolerance) {
      res.converged = true;
      break;
    }
  }
  res.final_cost = current;
  res.final_ssd = cost.ssd(res.field);
  return res;
}

}  // namespace repaint_lab
