// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The auxdpo Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string_view>
#include <vector>

#include "auxdpo/common.hpp"
#include "auxdpo/losses.hpp"
#include "auxdpo/policy.hpp"
#include "auxdpo/preference.hpp"

namespace auxdpo {

enum class SearchMethod { grid, gd };

std::string_view to_string(SearchMethod method);
SearchMethod parse_search_method(std::string_view text);

struct OptimConfig {
  SearchMethod method = SearchMethod::gd;
  double grid_lo = -2.0;
  double grid_hi = 2.0;
  double grid_step = 1e-4;
  double learning_rate = 1.0;
  double aux_learning_rate = 5e-3;
  std::size_t max_iters = 100000;
  double grad_tol = 1e-8;
  std::uint64_t seed = 0;
  std::size_t restarts = 1;
  double restart_scale = 0.5;
  bool alternating = false;  // block updates for (theta, c)

  void validate() const;
};

struct TrajectoryPoint {
  std::size_t iteration = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct OptimReport {
  Vector params;  // theta
  Vector aux;     // c (null-space coordinates) or raw offsets
  Vector delta;   // reconstructed offsets, when any
  double final_loss = 0.0;
  std::vector<TrajectoryPoint> trajectory;
  std::size_t iterations = 0;
  bool converged = false;
  bool boundary_hit = false;
  bool precision_limited = false;  // Armijo stalled at rounding level; gradient test took over
  bool clamped = false;
  Vector final_policy;
  double expected_reward = 0.0;
  bool preference_reversal = false;
  bool reward_reduction = false;
  double constraint_residual = 0.0;  // ||A_rho delta||_inf (or batch ratio for batchwise runs)
  bool constraint_violated = false;
  std::vector<double> null_ratio;  // batchwise: mean ||A_B delta_B|| / ||delta_B|| per epoch
};

class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, std::vector<TrajectoryPoint> trajectory)
      : NumericalError(what), trajectory_(std::move(trajectory)) {}
  const std::vector<TrajectoryPoint>& trajectory() const { return trajectory_; }

 private:
  std::vector<TrajectoryPoint> trajectory_;
};

/// Value and gradient at x. The gradient is written into `grad`.
using Objective = std::function<double(const Vector& x, Vector& grad)>;

/// Grid search (d = 1) or gradient descent with Armijo backtracking
/// (factor 0.5, c = 1e-4) and Barzilai-Borwein trial steps. `scales`
/// is a per-coordinate step scale; empty means learning_rate everywhere.
OptimReport minimize(const Objective& objective, const Vector& init, const OptimConfig& config,
                     const Vector& scales = Vector());

/// Fill final_policy, expected_reward and pathology flags from params.
void describe(OptimReport& report, const ParametricPolicy& policy, const RewardVector& r_star);

/// dpo / ipo / dpop population loss from theta0; auxdpo dispatches to the
/// null-space optimizer.
OptimReport minimize_population(const LossSpec& loss, const ParametricPolicy& policy,
                                const PreferenceSpec& spec, const OptimConfig& config);
/// Same on a dataset; auxdpo uses the null-space optimizer when
/// lambda_penalty = 0 and the penalized one otherwise.
OptimReport minimize_empirical(const LossSpec& loss, const ParametricPolicy& policy,
                               const PreferenceDataset& data, const OptimConfig& config);

/// Joint (theta, c) descent with delta = Gamma c; alternating blocks when
/// config.alternating is set (grid theta-block for d = 1).
OptimReport minimize_auxdpo_nullspace(const ParametricPolicy& policy, const PreferenceSpec& spec,
                                      double beta, const OptimConfig& config);
/// Data version, offsets shared per (s,a).
OptimReport minimize_auxdpo_nullspace(const ParametricPolicy& policy,
                                      const PreferenceDataset& data, double beta,
                                      const OptimConfig& config);

enum class OffsetMode { tied, per_example };

/// Simultaneous steps on theta (learning_rate) and delta (aux_learning_rate)
/// under the penalty lambda. Tied offsets are penalized through the exact
/// A_rho; per-example offsets through the sample average of the scores.
OptimReport minimize_auxdpo_penalized(const ParametricPolicy& policy,
                                      const PreferenceDataset& data, double beta, double lambda,
                                      const OptimConfig& config,
                                      OffsetMode mode = OffsetMode::tied);

struct BatchwiseConfig {
  BatchwiseKnobs knobs;
  std::size_t batch_size = 16;
  std::size_t epochs = 200;
  double learning_rate = 0.05;
  double aux_learning_rate = 5e-3;
  std::uint64_t seed = 0;
};

/// Minibatch AuxDPO with the batch penalty and tanh-capped offsets.
OptimReport train_batchwise_auxdpo(const ParametricPolicy& policy, const PreferenceDataset& data,
                                   double beta, const BatchwiseConfig& config);
/// Plain DPO under the same batches and theta step.
OptimReport train_batchwise_dpo(const ParametricPolicy& policy, const PreferenceDataset& data,
                                double beta, const BatchwiseConfig& config);

/// Fraction of samples whose chosen response has the larger implicit reward
/// (ties count one half).
double preference_accuracy(const ParametricPolicy& policy, const Vector& theta,
                           const PreferenceDataset& data);

/// key = value lines, then a blank line and the trajectory as CSV.
void write_report(std::ostream& out, const OptimReport& report);

}  // namespace auxdpo
