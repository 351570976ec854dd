// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The auxdpo Authors

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "auxdpo/common.hpp"

namespace auxdpo {

/// Finite prompt and response sets with a prompt distribution.
///
/// Every m-vector in the library is indexed by `index(s, a) = s * |A| + a`.
class StateActionSpace {
 public:
  StateActionSpace(std::vector<std::string> prompts, std::vector<std::string> responses,
                   Vector prompt_dist);

  /// Prompts named s1..sS, responses a1..aA, uniform prompt distribution.
  static StateActionSpace uniform(std::size_t num_prompts, std::size_t num_responses);
  /// Single prompt with rho = (1).
  static StateActionSpace promptless(std::size_t num_responses);

  std::size_t num_prompts() const { return prompts_.size(); }
  std::size_t num_responses() const { return responses_.size(); }
  std::size_t size() const { return prompts_.size() * responses_.size(); }

  std::size_t index(std::size_t s, std::size_t a) const;
  const Vector& prompt_dist() const { return rho_; }

  const std::string& prompt_name(std::size_t s) const { return prompts_.at(s); }
  const std::string& response_name(std::size_t a) const { return responses_.at(a); }
  const std::vector<std::string>& prompts() const { return prompts_; }
  const std::vector<std::string>& responses() const { return responses_; }
  std::optional<std::size_t> find_prompt(const std::string& name) const;
  std::optional<std::size_t> find_response(const std::string& name) const;

  /// Resolve a name, throwing InvalidArgument when unknown.
  std::size_t prompt_index(const std::string& name) const;
  std::size_t response_index(const std::string& name) const;

  bool operator==(const StateActionSpace&) const = default;

 private:
  std::vector<std::string> prompts_;
  std::vector<std::string> responses_;
  Vector rho_;
};

/// Reward function over (prompt, response) pairs, stored in space order.
class RewardVector {
 public:
  RewardVector() = default;
  explicit RewardVector(Vector values);

  static RewardVector zeros(std::size_t m) { return RewardVector(Vector::Zero(static_cast<Eigen::Index>(m))); }

  const Vector& values() const { return values_; }
  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }
  double operator[](std::size_t i) const { return values_(static_cast<Eigen::Index>(i)); }
  double at(const StateActionSpace& space, std::size_t s, std::size_t a) const;

 private:
  Vector values_;
};

}  // namespace auxdpo
