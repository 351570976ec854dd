// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The auxdpo Authors

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "auxdpo/losses.hpp"
#include "auxdpo/optim.hpp"
#include "auxdpo/policy.hpp"
#include "auxdpo/preference.hpp"

namespace auxdpo {

/// Everything a `fit` or `diagnose` run needs.
struct ExperimentSpec {
  std::string name = "experiment";
  ParametricPolicy policy = ParametricPolicy::toy();
  PreferenceSpec preferences{StateActionSpace::promptless(3), RewardVector::zeros(3)};
  std::vector<LossKind> methods;
  LossSpec loss;
  OptimConfig optim;
  bool sampled = false;  // fit on sample_dataset(preferences, seed) instead of the population
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> dataset_file;  // CSV dataset overriding sampling
  std::string output_dir;
  std::string canonical;  // normalized text of the parsed file, used for hashing

  void validate() const;
};

/// Parse an INI configuration. Relative file references resolve against
/// `base_dir`.
///
///   [experiment]  name, methods, beta, seed, data = population|sampled, dataset, output_dir
///   [space]       prompts, responses (count or names), prompt_dist = uniform|list
///   [policy]      kind, features, dim, theta0 = zero|uniform|random|list, seed
///   [policy.mlp]  hidden, input_dim, inputs
///   [preferences] latent, counts (inline `s a a' n; ...` or a file)
///   [loss]        lambda_penalty, lambda_null, lambda_amp, delta_cap, lambda_pos, tau
///   [optim]       method, grid_lo, grid_hi, grid_step, learning_rate, aux_lr,
///                 max_iters, grad_tol, seed, restarts, alternating
ExperimentSpec parse_experiment(std::istream& in, const std::filesystem::path& base_dir = ".");
ExperimentSpec load_experiment(const std::filesystem::path& file);

/// Numbers separated by whitespace or commas.
std::vector<double> parse_number_list(const std::string& text);
/// Rows separated by ';', entries as parse_number_list.
Matrix parse_matrix(const std::string& text);

/// 64-bit FNV-1a, as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

}  // namespace auxdpo
