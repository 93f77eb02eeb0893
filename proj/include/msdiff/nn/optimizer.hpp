//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef MSDIFF_NN_OPTIMIZER_HPP
#define MSDIFF_NN_OPTIMIZER_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>

#include "msdiff/util/errors.hpp"

namespace msdiff {

struct AdamWState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t step = 0;

  explicit AdamWState(Eigen::Index size = 0)
      : m(Eigen::VectorXd::Zero(size)), v(Eigen::VectorXd::Zero(size)) {}
};

/// Adaptive moments with decoupled weight decay:
/// theta <- theta (1 - lr wd) - lr mhat / (sqrt(vhat) + 1e-8).
inline void adamw_step(Eigen::VectorXd &theta, const Eigen::VectorXd &grad,
                       AdamWState &state, double lr, double weight_decay,
                       double beta1 = 0.9, double beta2 = 0.999,
                       double eps = 1e-8) {
  if (theta.size() != grad.size() || theta.size() != state.m.size() ||
      theta.size() != state.v.size())
    throw ShapeMismatchError("adamw_step: size mismatch");
  if (!grad.allFinite()) throw NonFiniteError("adamw_step: non-finite gradient");
  state.step += 1;
  state.m = beta1 * state.m + (1.0 - beta1) * grad;
  state.v = beta2 * state.v + (1.0 - beta2) * grad.cwiseProduct(grad);
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  Eigen::VectorXd mhat = state.m / bc1;
  Eigen::VectorXd denom = (state.v / bc2).cwiseSqrt();
  denom.array() += eps;
  theta = theta * (1.0 - lr * weight_decay) - lr * mhat.cwiseQuotient(denom);
  if (!theta.allFinite()) throw NonFiniteError("adamw_step: non-finite update");
}

/// Half-cosine decay from lr_max to lr_min over total steps; steps past the
/// horizon stay at lr_min.
inline double cosine_lr(std::int64_t step, std::int64_t total, double lr_max,
                        double lr_min) {
  if (total <= 0) throw ConfigError("cosine_lr: total must be positive");
  if (step < 0) throw ConfigError("cosine_lr: negative step");
  if (step >= total) return lr_min;
  double frac = static_cast<double>(step) / static_cast<double>(total);
  return lr_min +
         0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

/// Central-difference gradient check on selected coordinates. Returns the
/// maximum relative error |fd - analytic| / max(|fd|, |analytic|, floor).
inline double max_relative_fd_error(
    const std::function<double(const Eigen::VectorXd &)> &loss,
    Eigen::VectorXd theta, const Eigen::VectorXd &analytic,
    std::span<const Eigen::Index> coords, double h = 1e-5,
    double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index c : coords) {
    double keep = theta[c];
    theta[c] = keep + h;
    double up = loss(theta);
    theta[c] = keep - h;
    double down = loss(theta);
    theta[c] = keep;
    double fd = (up - down) / (2.0 * h);
    double denom = std::max({std::abs(fd), std::abs(analytic[c]), floor});
    worst = std::max(worst, std::abs(fd - analytic[c]) / denom);
  }
  return worst;
}

}  // namespace msdiff

#endif  // MSDIFF_NN_OPTIMIZER_HPP
