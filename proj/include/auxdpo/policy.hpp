// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The auxdpo Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "auxdpo/common.hpp"
#include "auxdpo/space.hpp"

namespace auxdpo {

enum class PolicyKind { tabular_softmax, linear_softmax, mlp_softmax };

std::string_view to_string(PolicyKind kind);
PolicyKind parse_policy_kind(std::string_view text);

/// Softmax policy pi_theta(a|s) proportional to exp(f_theta(s, a)).
///
/// Logit families:
///   tabular-softmax  f(s,a) = theta[index(s,a)]                    (d = m)
///   linear-softmax   f(s,a) = phi(s,a)^T theta                     (features m x d)
///   mlp-softmax      f(s,a) = w2^T tanh(W1 x(s,a) + b1)            (inputs m x p)
///
/// The mlp parameter vector is laid out as [W1 row-major (h x p), b1 (h), w2 (h)].
/// The reference parameter theta0 is part of the policy; everything else
/// takes theta explicitly. Instances are immutable.
class ParametricPolicy {
 public:
  static ParametricPolicy tabular(StateActionSpace space, Vector theta0);
  static ParametricPolicy linear(StateActionSpace space, Matrix features, Vector theta0);
  static ParametricPolicy mlp(StateActionSpace space, Matrix inputs, std::size_t hidden,
                              Vector theta0);

  /// Promptless three-response family pi ~ [e^t, e^-t, 1] with theta0 = 0.
  static ParametricPolicy toy();

  /// Same family, different reference parameter.
  ParametricPolicy with_reference(Vector theta0) const;

  PolicyKind kind() const { return kind_; }
  const StateActionSpace& space() const { return space_; }
  std::size_t dim() const { return static_cast<std::size_t>(theta0_.size()); }
  std::size_t size() const { return space_.size(); }
  const Vector& theta0() const { return theta0_; }
  const Matrix& features() const { return features_; }
  std::size_t hidden() const { return hidden_; }

  Vector logits(const Vector& theta) const;
  /// m x d Jacobian of the logits.
  Matrix logit_jacobian(const Vector& theta) const;
  Vector log_probs(const Vector& theta) const;
  Vector probs(const Vector& theta) const;

  double log_prob(const Vector& theta, std::size_t s, std::size_t a) const;
  /// grad_theta log pi_theta(a|s).
  Vector score(const Vector& theta, std::size_t s, std::size_t a) const;
  /// d x m matrix whose (s,a) column is the score.
  Matrix score_matrix(const Vector& theta) const;

 private:
  ParametricPolicy(PolicyKind kind, StateActionSpace space, Matrix features, std::size_t hidden,
                   Vector theta0);

  void check_theta(const Vector& theta) const;
  void check_pair(std::size_t s, std::size_t a) const;

  PolicyKind kind_;
  StateActionSpace space_;
  Matrix features_;  // linear: phi (m x d); mlp: inputs (m x p); tabular: empty
  std::size_t hidden_ = 0;
  Vector theta0_;
};

/// Parameter count of an mlp-softmax with the given input and hidden widths.
std::size_t mlp_parameter_count(std::size_t input_dim, std::size_t hidden);

/// Local geometry of the policy class at the reference parameter.
struct GeometryBundle {
  Vector theta0;
  Matrix scores;           // A: d x m, columns grad log pi_theta0(a|s)
  Vector weights;          // diagonal of D: rho(s) pi_theta0(a|s)
  Matrix weighted_scores;  // A_rho = A D
  Matrix fisher;           // F = A D A^T
  double beta = 1.0;

  std::size_t dim() const { return static_cast<std::size_t>(scores.rows()); }
  std::size_t size() const { return static_cast<std::size_t>(scores.cols()); }
};

GeometryBundle geometry_bundle(const ParametricPolicy& policy, double beta);

/// Monte-Carlo estimate of E[score score^T] under rho and pi_theta.
Matrix monte_carlo_fisher(const ParametricPolicy& policy, const Vector& theta, std::size_t samples,
                          std::uint64_t seed);

/// r(s,a) = beta log(pi_theta(a|s) / pi_theta0(a|s)).
RewardVector implicit_reward(const ParametricPolicy& policy, const Vector& theta, double beta);

/// Sum over (s,a) of rho(s) pi_theta(a|s) r(s,a).
double expected_reward(const ParametricPolicy& policy, const Vector& theta, const RewardVector& r);

/// E_rho[ KL(pi_theta(.|s) || pi_theta0(.|s)) ].
double kl_to_ref(const ParametricPolicy& policy, const Vector& theta);

/// Exact KL-regularized objective J(theta; r) = E[r] - beta * E_rho KL.
double rlhf_objective(const ParametricPolicy& policy, const Vector& theta, const RewardVector& r,
                      double beta);

/// Gibbs tilt pi_theta0(a|s) exp(r(s,a)/beta) / Z(s) of the reference policy.
Vector gibbs_policy(const ParametricPolicy& policy, const RewardVector& r, double beta);

}  // namespace auxdpo
