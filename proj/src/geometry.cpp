// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The auxdpo Authors

#include "auxdpo/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "auxdpo/rng.hpp"

namespace auxdpo {

NullBasis nullspace_basis(const Matrix& a) {
  if (!a.allFinite()) throw NonFiniteInput("null-space input contains non-finite entries");
  const Eigen::Index m = a.cols();
  NullBasis out;
  if (m == 0) return out;
  Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeFullV);
  const Vector& sv = svd.singularValues();
  const double smax = sv.size() > 0 ? sv.maxCoeff() : 0.0;
  if (!(smax > 0.0)) {
    out.gamma = Matrix::Identity(m, m);
    out.k = static_cast<std::size_t>(m);
    return out;
  }
  const double cutoff = 1e-10 * smax;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cutoff) ++rank;
    if (sv(i) > 0.1 * cutoff && sv(i) < 10.0 * cutoff) out.ambiguous = true;
  }
  out.rank = static_cast<std::size_t>(rank);
  out.k = static_cast<std::size_t>(m - rank);
  out.gamma = svd.matrixV().rightCols(m - rank);
  return out;
}

NullBasis nullspace_basis(const GeometryBundle& bundle) {
  return nullspace_basis(bundle.weighted_scores);
}

bool same_equivalence_class(const RewardVector& r1, const RewardVector& r2,
                            const GeometryBundle& bundle, double tol) {
  const auto m = static_cast<Eigen::Index>(bundle.size());
  require_size(r1.values(), m, "first reward");
  require_size(r2.values(), m, "second reward");
  return (bundle.weighted_scores * (r1.values() - r2.values())).lpNorm<Eigen::Infinity>() <= tol;
}

bool EquivalenceClassSpec::contains(const RewardVector& r, const GeometryBundle& bundle,
                                    double tol) const {
  require_size(r.values(), static_cast<Eigen::Index>(bundle.size()), "reward");
  return (bundle.weighted_scores * r.values() - rhs).lpNorm<Eigen::Infinity>() <= tol;
}

EquivalenceClassSpec equivalence_class(const Vector& theta, const GeometryBundle& bundle) {
  require_size(theta, static_cast<Eigen::Index>(bundle.dim()), "theta");
  require_finite(theta, "theta");
  return {theta, bundle.beta, bundle.beta * (bundle.fisher * (theta - bundle.theta0))};
}

Matrix symmetric_pinv(const Matrix& sym, double rel_tol, bool* deficient) {
  if (sym.rows() != sym.cols()) throw InvalidArgument("pseudoinverse needs a square matrix");
  if (!sym.allFinite()) throw NonFiniteInput("pseudoinverse input contains non-finite entries");
  if (deficient != nullptr) *deficient = false;
  const Eigen::Index n = sym.rows();
  if (n == 0) return sym;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (sym + sym.transpose()));
  if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
  const Vector& lam = eig.eigenvalues();
  const double lmax = lam.cwiseAbs().maxCoeff();
  const double cutoff = rel_tol * lmax;
  Vector inv = Vector::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (lmax > 0.0 && lam(i) > cutoff) {
      inv(i) = 1.0 / lam(i);
    } else if (deficient != nullptr) {
      *deficient = true;
    }
  }
  const Matrix& v = eig.eigenvectors();
  return v * inv.asDiagonal() * v.transpose();
}

Representative min_norm_representative(const Vector& theta, const GeometryBundle& bundle) {
  require_size(theta, static_cast<Eigen::Index>(bundle.dim()), "theta");
  require_finite(theta, "theta");
  Representative out;
  const Matrix pinv = symmetric_pinv(bundle.fisher, 1e-10, &out.degenerate);
  const Vector step = theta - bundle.theta0;
  const Vector projected = out.degenerate ? Vector(pinv * (bundle.fisher * step)) : step;
  out.reward = RewardVector(bundle.beta * (bundle.scores.transpose() * projected));
  return out;
}

LocalOptimum rlhf_local_optimum(const RewardVector& r_star, const GeometryBundle& bundle) {
  require_size(r_star.values(), static_cast<Eigen::Index>(bundle.size()), "r*");
  if (!(bundle.beta > 0.0)) throw InvalidArgument("beta must be positive");
  LocalOptimum out;
  const Matrix pinv = symmetric_pinv(bundle.fisher, 1e-10, &out.rank_deficient);
  const Vector target = bundle.weighted_scores * r_star.values();
  out.theta = bundle.theta0 + pinv * target / bundle.beta;
  const Vector gap = target - bundle.beta * (bundle.fisher * (out.theta - bundle.theta0));
  out.residual = (bundle.fisher * (pinv * gap)).lpNorm<Eigen::Infinity>();
  return out;
}

namespace {

double projection_excess(const PreferenceSpec& spec, const ParametricPolicy& policy,
                         const Vector& theta, double beta) {
  const auto r = implicit_reward(policy, theta, beta);
  const auto& space = spec.space();
  double total = 0.0;
  for (const auto& [key, n] : spec.counts()) {
    const double target = btl_prob(spec.latent(), space, key.prompt, key.first, key.second);
    const double model = btl_prob(r, space, key.prompt, key.first, key.second);
    total += n * bernoulli_kl(target, model);
  }
  return total;
}

Vector central_gradient(const PreferenceSpec& spec, const ParametricPolicy& policy,
                        const Vector& theta, double beta) {
  Vector g(theta.size());
  Vector probe = theta;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(theta(i)));
    probe(i) = theta(i) + h;
    const double up = projection_excess(spec, policy, probe, beta);
    probe(i) = theta(i) - h;
    const double down = projection_excess(spec, policy, probe, beta);
    probe(i) = theta(i);
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

// Plain steepest descent with Armijo backtracking; kept separate from the
// optim module so it can serve as a reference.
Vector descend(const PreferenceSpec& spec, const ParametricPolicy& policy, Vector theta,
               double beta, const ProjectionOptions& options, double& value) {
  value = projection_excess(spec, policy, theta, beta);
  double step = 1.0;
  Vector prev_theta, prev_grad;
  for (std::size_t it = 0; it < options.max_iters; ++it) {
    const Vector g = central_gradient(spec, policy, theta, beta);
    if (g.norm() <= options.grad_tol) break;
    if (prev_grad.size() > 0) {
      const Vector s = theta - prev_theta;
      const Vector y = g - prev_grad;
      const double sy = s.dot(y);
      if (sy > 0.0) step = std::clamp(s.squaredNorm() / sy, 1e-8, 1e8);
    }
    bool moved = false;
    for (int bt = 0; bt < 60; ++bt) {
      const Vector trial = theta - step * g;
      const double v = projection_excess(spec, policy, trial, beta);
      if (std::isfinite(v) && v <= value - 1e-4 * step * g.squaredNorm()) {
        prev_theta = theta;
        prev_grad = g;
        theta = trial;
        value = v;
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
  }
  return theta;
}

}  // namespace

Projection kl_projection_oracle(const PreferenceSpec& spec, const ParametricPolicy& policy,
                                double beta, const ProjectionOptions& options) {
  if (!(beta > 0.0)) throw InvalidArgument("beta must be positive");
  if (spec.space() != policy.space()) throw InvalidArgument("spec and policy spaces differ");
  spec.validate();
  Projection out;
  if (policy.dim() == 1) {
    if (!(options.grid_step > 0.0) || !(options.grid_lo < options.grid_hi)) {
      throw InvalidArgument("invalid projection grid");
    }
    const auto points =
        static_cast<long>(std::floor((options.grid_hi - options.grid_lo) / options.grid_step + 0.5)) + 1;
    double best = std::numeric_limits<double>::infinity();
    long best_i = 0;
    Vector theta(1);
    for (long i = 0; i < points; ++i) {
      theta(0) = options.grid_lo + static_cast<double>(i) * options.grid_step;
      const double v = projection_excess(spec, policy, theta, beta);
      if (v < best) {
        best = v;
        best_i = i;
      }
    }
    out.theta = Vector::Constant(1, options.grid_lo + static_cast<double>(best_i) * options.grid_step);
    out.excess = best;
    out.boundary = best_i == 0 || best_i == points - 1;
  } else {
    CounterRng rng(options.seed, 0x0AC1E);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t start = 0; start < std::max<std::size_t>(options.starts, 1); ++start) {
      Vector init = policy.theta0();
      if (start > 0) init += rng.normal_vector(init.size(), options.start_scale);
      double value = 0.0;
      const Vector theta = descend(spec, policy, init, beta, options, value);
      if (value < best) {
        best = value;
        out.theta = theta;
      }
    }
    out.excess = best;
  }
  out.reward = implicit_reward(policy, out.theta, beta);
  return out;
}

Vector linearization_error(const ParametricPolicy& policy, const Vector& theta, double beta) {
  const auto r = implicit_reward(policy, theta, beta);
  const Matrix a = policy.score_matrix(policy.theta0());
  return r.values() - beta * (a.transpose() * (theta - policy.theta0()));
}

double objective_quadratic_error(const ParametricPolicy& policy, const Vector& theta, double beta,
                                 const RewardVector& r_star) {
  const double exact = rlhf_objective(policy, theta, r_star, beta);
  const auto bundle = geometry_bundle(policy, beta);
  const Vector step = theta - policy.theta0();
  const double model = expected_reward(policy, policy.theta0(), r_star) +
                       step.dot(bundle.weighted_scores * r_star.values()) -
                       0.5 * beta * step.dot(bundle.fisher * step);
  return std::abs(exact - model);
}

FailureCertificate failure_mode_certificate(const ParametricPolicy& policy, const Vector& theta,
                                            const RewardVector& r_star) {
  constexpr double tol = 1e-12;
  const auto& space = policy.space();
  require_size(r_star.values(), static_cast<Eigen::Index>(space.size()), "r*");
  const Vector pi = policy.probs(theta);
  const Vector pi0 = policy.probs(policy.theta0());
  FailureCertificate out;
  for (std::size_t s = 0; s < space.num_prompts(); ++s) {
    if (!(space.prompt_dist()(static_cast<Eigen::Index>(s)) > 0.0)) continue;
    auto at = [&](std::size_t a) { return static_cast<Eigen::Index>(space.index(s, a)); };
    std::size_t best = 0;
    for (std::size_t a = 1; a < space.num_responses(); ++a) {
      if (r_star.values()(at(a)) > r_star.values()(at(best))) best = a;
    }
    const double top = r_star.values()(at(best));
    bool worse_gained = false;
    for (std::size_t b = 0; b < space.num_responses(); ++b) {
      if (!(r_star.values()(at(b)) < top - tol)) continue;
      if (pi(at(b)) > pi(at(best)) + tol && pi0(at(b)) <= pi0(at(best)) + tol) {
        out.preference_reversal = true;
      }
      if (pi(at(b)) > pi0(at(b)) + tol) worse_gained = true;
    }
    if (pi(at(best)) < pi0(at(best)) - tol && worse_gained) out.optimal_mass_drop = true;
  }
  out.reward = expected_reward(policy, theta, r_star);
  out.reference_reward = expected_reward(policy, policy.theta0(), r_star);
  out.reward_reduction = out.reward < out.reference_reward - tol;
  return out;
}

}  // namespace auxdpo
