// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The auxdpo Authors

#pragma once

#include <cstddef>
#include <span>
#include <string_view>

#include "auxdpo/common.hpp"
#include "auxdpo/policy.hpp"
#include "auxdpo/preference.hpp"

namespace auxdpo {

enum class LossKind { dpo, ipo, dpop, auxdpo };

std::string_view to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view text);

/// Objective selection and knobs. `tau <= 0` means "use beta" for IPO.
struct LossSpec {
  LossKind kind = LossKind::dpo;
  double beta = 1.0;
  double lambda_penalty = 0.0;  // empirical AuxDPO null-space penalty
  double lambda_null = 1.0;     // batchwise AuxDPO
  double lambda_amp = 0.01;     // batchwise AuxDPO
  double delta_cap = 1.0;       // batchwise AuxDPO
  double lambda_pos = 1.0;      // DPOP
  double tau = 0.0;             // IPO

  double ipo_tau() const { return tau > 0.0 ? tau : beta; }
  void validate() const;
};

/// Loss value with gradients. `grad` is with respect to theta; `aux_grad`
/// is with respect to the auxiliary offsets (empty when there are none).
/// `clamped` is set when a log-probability hit the 1e-300 floor.
struct LossValue {
  double value = 0.0;
  Vector grad;
  Vector aux_grad;
  bool clamped = false;
};

// Population objectives weight each pair by n_{s,a,a'} and the BTL
// probability p* of the latent reward; empirical objectives weight each
// sample by its weight with target 1.

/// -sum n [p* log p_theta + (1 - p*) log(1 - p_theta)].
LossValue dpo_population_loss(const ParametricPolicy& policy, const Vector& theta,
                              const PreferenceSpec& spec, double beta);
/// -sum_i w_i log sigma(r_theta(s,a_w) - r_theta(s,a_l)).
LossValue dpo_empirical_loss(const ParametricPolicy& policy, const Vector& theta,
                             const PreferenceDataset& data, double beta);

/// sum n [p* (h - 1/(2 tau))^2 + (1 - p*) (-h - 1/(2 tau))^2],  h = margin / beta.
LossValue ipo_population_loss(const ParametricPolicy& policy, const Vector& theta,
                              const PreferenceSpec& spec, double beta, double tau);
LossValue ipo_empirical_loss(const ParametricPolicy& policy, const Vector& theta,
                             const PreferenceDataset& data, double beta, double tau);

/// DPO with the chosen-response hinge max(0, log pi_0(a_w|s) - log pi_theta(a_w|s))
/// subtracted inside the sigmoid, scaled by beta * lambda_pos.
LossValue dpop_population_loss(const ParametricPolicy& policy, const Vector& theta,
                               const PreferenceSpec& spec, double beta, double lambda_pos);
LossValue dpop_empirical_loss(const ParametricPolicy& policy, const Vector& theta,
                              const PreferenceDataset& data, double beta, double lambda_pos);

/// DPO population loss on r_theta + delta, delta of length m. The null-space
/// constraint on delta is the caller's job.
LossValue auxdpo_population_loss(const ParametricPolicy& policy, const Vector& theta,
                                 const Vector& delta, const PreferenceSpec& spec, double beta);

/// Per-example offsets (delta[2i] for the chosen, delta[2i+1] for the rejected
/// response of sample i):
///   -(1/W) sum_i w_i log sigma(margin_i + delta[2i] - delta[2i+1])
///   + lambda || (1/(2W)) sum_i w_i (delta[2i] A(s,a_w) + delta[2i+1] A(s,a_l)) ||^2
/// with A the reference scores from `bundle` and W the total sample weight.
LossValue auxdpo_empirical_loss(const ParametricPolicy& policy, const Vector& theta,
                                const Vector& delta, const PreferenceDataset& data, double beta,
                                double lambda, const GeometryBundle& bundle);

/// Offsets shared per (s,a) (delta of length m):
///   -sum_i w_i log sigma(margin_i + delta(s,a_w) - delta(s,a_l)) + lambda ||A_rho delta||^2.
LossValue auxdpo_tied_loss(const ParametricPolicy& policy, const Vector& theta, const Vector& delta,
                           const PreferenceDataset& data, double beta, double lambda,
                           const GeometryBundle& bundle);

struct BatchwiseKnobs {
  double lambda_null = 1.0;
  double lambda_amp = 0.01;
  double delta_cap = 1.0;
};

/// delta = delta_cap * tanh(raw), elementwise.
Vector capped_delta(const Vector& raw, double delta_cap);

/// Batch objective, minimized:
///   -sum_{i in B} log sigma(m_i) + lambda_null ||A_B delta_B||^2 - lambda_amp ||delta_B||^2
/// with m_i = beta (dlog pi_theta - dlog pi_0 + delta[2i] - delta[2i+1]) and
/// delta = delta_cap tanh(raw). `raw` has length 2n; aux_grad is with respect
/// to raw and vanishes outside the batch.
LossValue batchwise_auxdpo_loss(const ParametricPolicy& policy, const Vector& theta,
                                const Vector& raw, const PreferenceDataset& data,
                                std::span<const std::size_t> batch, double beta,
                                const BatchwiseKnobs& knobs, const GeometryBundle& bundle);

/// d x 2|B| matrix of reference scores for the batch (chosen, rejected per sample).
Matrix batch_score_matrix(const PreferenceDataset& data, std::span<const std::size_t> batch,
                          const GeometryBundle& bundle, const StateActionSpace& space);

/// Population loss for dpo / ipo / dpop as selected by `loss.kind`.
LossValue population_loss(const LossSpec& loss, const ParametricPolicy& policy, const Vector& theta,
                          const PreferenceSpec& spec);
LossValue empirical_loss(const LossSpec& loss, const ParametricPolicy& policy, const Vector& theta,
                         const PreferenceDataset& data);

/// sum n H(p*): the infimum of the population DPO loss over all rewards.
double entropy_floor(const PreferenceSpec& spec);
/// sum n d_KL(p*(r*) || p(r)).
double weighted_reverse_kl(const PreferenceSpec& spec, const RewardVector& r);

}  // namespace auxdpo
