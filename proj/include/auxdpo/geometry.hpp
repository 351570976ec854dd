// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The auxdpo Authors

#pragma once

#include <cstddef>
#include <cstdint>

#include "auxdpo/common.hpp"
#include "auxdpo/policy.hpp"
#include "auxdpo/preference.hpp"

namespace auxdpo {

/// Orthonormal basis of null(A_rho). `gamma` is m x k.
struct NullBasis {
  Matrix gamma;
  std::size_t k = 0;
  std::size_t rank = 0;
  bool ambiguous = false;  // a singular value sits within 10x of the cutoff
};

/// SVD with cutoff 1e-10 * sigma_max. A zero matrix yields the identity.
NullBasis nullspace_basis(const Matrix& a);
NullBasis nullspace_basis(const GeometryBundle& bundle);

constexpr double kClassTolerance = 1e-8;

/// ||A_rho (r1 - r2)||_inf <= tol.
bool same_equivalence_class(const RewardVector& r1, const RewardVector& r2,
                            const GeometryBundle& bundle, double tol = kClassTolerance);

/// { r : A_rho r = beta F (theta - theta0) }.
struct EquivalenceClassSpec {
  Vector theta;
  double beta = 1.0;
  Vector rhs;

  bool contains(const RewardVector& r, const GeometryBundle& bundle,
                double tol = kClassTolerance) const;
};

EquivalenceClassSpec equivalence_class(const Vector& theta, const GeometryBundle& bundle);

/// Moore-Penrose inverse of a symmetric PSD matrix; eigenvalues below
/// rel_tol * lambda_max are dropped. `deficient` reports a drop.
Matrix symmetric_pinv(const Matrix& sym, double rel_tol = 1e-10, bool* deficient = nullptr);

struct Representative {
  RewardVector reward;
  bool degenerate = false;  // pseudoinverse was needed
};

/// Minimum D-norm member of the class of theta: beta A^T F^+ F (theta - theta0).
/// Since null(F) = null(A^T) this equals beta A^T (theta - theta0) even when F
/// is singular; `degenerate` only records that the pseudoinverse was needed.
Representative min_norm_representative(const Vector& theta, const GeometryBundle& bundle);

struct LocalOptimum {
  Vector theta;
  bool rank_deficient = false;
  double residual = 0.0;  // ||P_F (A_rho r* - beta F (theta - theta0))||_inf
};

/// theta* = theta0 + (1/beta) F^+ A_rho r*.
LocalOptimum rlhf_local_optimum(const RewardVector& r_star, const GeometryBundle& bundle);

struct ProjectionOptions {
  double grid_lo = -2.0;
  double grid_hi = 2.0;
  double grid_step = 1e-4;
  std::size_t starts = 16;
  double start_scale = 1.0;
  std::size_t max_iters = 20000;
  double grad_tol = 1e-9;
  std::uint64_t seed = 0;
};

struct Projection {
  Vector theta;
  RewardVector reward;  // r^beta at theta
  double excess = 0.0;  // sum n d_KL(p* || p_theta)
  bool boundary = false;
};

/// Brute-force minimizer of sum n d_KL(p*(r*) || p(r^beta_theta)): grid for
/// d = 1, multi-start descent with finite-difference gradients otherwise.
Projection kl_projection_oracle(const PreferenceSpec& spec, const ParametricPolicy& policy,
                                double beta, const ProjectionOptions& options = {});

/// r^beta_theta - beta A^T (theta - theta0), per (s,a).
Vector linearization_error(const ParametricPolicy& policy, const Vector& theta, double beta);

/// |J(theta; r*) - quadratic model| with J = E[r*] - beta KL evaluated exactly.
double objective_quadratic_error(const ParametricPolicy& policy, const Vector& theta, double beta,
                                 const RewardVector& r_star);

/// Pathologies of a trained policy relative to the reference.
struct FailureCertificate {
  bool preference_reversal = false;  // a worse response now outranks the best one
  bool optimal_mass_drop = false;    // best response lost mass while a worse one gained
  bool reward_reduction = false;     // E[r*] fell below the reference value
  double reward = 0.0;
  double reference_reward = 0.0;

  bool all() const { return preference_reversal && optimal_mass_drop && reward_reduction; }
  bool none() const { return !preference_reversal && !optimal_mass_drop && !reward_reduction; }
};

FailureCertificate failure_mode_certificate(const ParametricPolicy& policy, const Vector& theta,
                                            const RewardVector& r_star);

}  // namespace auxdpo
