// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The auxdpo Authors

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "auxdpo/common.hpp"
#include "auxdpo/policy.hpp"
#include "auxdpo/preference.hpp"
#include "auxdpo/rng.hpp"

namespace auxdpo::testing {

/// Central differences of a scalar function.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                          double h = 1e-5) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector up = x, down = x;
    up(i) += h;
    down(i) -= h;
    g(i) = (f(up) - f(down)) / (2.0 * h);
  }
  return g;
}

/// ||a - b||_inf / max(1, ||b||_inf).
inline double rel_error(const Vector& a, const Vector& b) {
  return (a - b).lpNorm<Eigen::Infinity>() / std::max(1.0, b.lpNorm<Eigen::Infinity>());
}

inline double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

/// Small random instances of each policy kind.
inline ParametricPolicy random_policy(PolicyKind kind, std::uint64_t seed, std::size_t prompts = 2,
                                      std::size_t responses = 3) {
  CounterRng rng(seed, 17);
  auto space = StateActionSpace::uniform(prompts, responses);
  const auto m = static_cast<Eigen::Index>(space.size());
  switch (kind) {
    case PolicyKind::tabular_softmax:
      return ParametricPolicy::tabular(space, rng.normal_vector(m, 0.5));
    case PolicyKind::linear_softmax:
      return ParametricPolicy::linear(space, rng.normal_matrix(m, 3), rng.normal_vector(3, 0.5));
    case PolicyKind::mlp_softmax: {
      const std::size_t p = 3, h = 4;
      return ParametricPolicy::mlp(space, rng.normal_matrix(m, p), h,
                                   rng.normal_vector(static_cast<Eigen::Index>(mlp_parameter_count(p, h)), 0.5));
    }
  }
  throw InvalidArgument("unknown policy kind");
}

inline const std::vector<PolicyKind>& all_kinds() {
  static const std::vector<PolicyKind> kinds{PolicyKind::tabular_softmax, PolicyKind::linear_softmax,
                                             PolicyKind::mlp_softmax};
  return kinds;
}

/// Random latent reward with integer counts 1..max_count on every pair.
inline PreferenceSpec random_spec(const StateActionSpace& space, std::uint64_t seed,
                                  int max_count = 9) {
  CounterRng rng(seed, 29);
  PreferenceSpec spec(space, RewardVector(rng.normal_vector(static_cast<Eigen::Index>(space.size()))));
  for (std::size_t s = 0; s < space.num_prompts(); ++s) {
    for (std::size_t a = 0; a < space.num_responses(); ++a) {
      for (std::size_t b = a + 1; b < space.num_responses(); ++b) {
        spec.set_count(s, a, b, 1.0 + std::floor(max_count * rng.next_uniform()));
      }
    }
  }
  return spec;
}

/// Hand-derived population DPO loss on the toy family at beta = 1 with
/// r* = [1, 2, 0]. Implicit reward differences are a1-a2: 2t, a2-a3: -t,
/// a3-a1: -t.
inline double toy_dpo_loss(double t, double n12, double n23, double n31) {
  auto term = [](double n, double p_star, double margin) {
    const double p = 1.0 / (1.0 + std::exp(-margin));
    return -n * (p_star * std::log(p) + (1.0 - p_star) * std::log(1.0 - p));
  };
  const double s_m1 = 1.0 / (1.0 + std::exp(1.0));
  const double s_p2 = 1.0 / (1.0 + std::exp(-2.0));
  return term(n12, s_m1, 2.0 * t) + term(n23, s_p2, -t) + term(n31, s_m1, -t);
}

/// Brute-force argmin of a scalar function on a uniform grid.
inline double grid_argmin(const std::function<double(double)>& f, double lo, double hi,
                          double step) {
  double best_x = lo, best = f(lo);
  const auto n = static_cast<long>(std::llround((hi - lo) / step));
  for (long i = 1; i <= n; ++i) {
    const double x = lo + static_cast<double>(i) * step;
    const double v = f(x);
    if (v < best) {
      best = v;
      best_x = x;
    }
  }
  return best_x;
}

/// Minimum D-norm solution of A_rho r = rhs by a direct KKT solve:
///   [2D  A_rho^T] [r     ]   [0  ]
///   [A_rho   0  ] [lambda] = [rhs]
inline Vector kkt_min_norm(const Matrix& a_rho, const Vector& weights, const Vector& rhs) {
  const auto m = a_rho.cols();
  const auto d = a_rho.rows();
  Matrix k = Matrix::Zero(m + d, m + d);
  k.topLeftCorner(m, m) = 2.0 * weights.asDiagonal();
  k.topRightCorner(m, d) = a_rho.transpose();
  k.bottomLeftCorner(d, m) = a_rho;
  Vector b = Vector::Zero(m + d);
  b.tail(d) = rhs;
  const Vector sol = k.completeOrthogonalDecomposition().solve(b);
  return sol.head(m);
}

}  // namespace auxdpo::testing
