// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The auxdpo Authors

#pragma once

#include <cstdint>

#include "auxdpo/common.hpp"

namespace auxdpo {

/// Counter-based generator built on the SplitMix64 finalizer.
///
/// Draw k of stream s under seed x is
///   mix(mix(x ^ mix(s + G)) + (k + 1) * G),   G = 0x9E3779B97F4A7C15,
/// where mix is the SplitMix64 output function. Every draw is a pure function
/// of (seed, stream, counter), so results are identical across platforms and
/// independent of evaluation order.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0);

  static std::uint64_t mix(std::uint64_t z);

  std::uint64_t bits(std::uint64_t counter) const;
  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform(std::uint64_t counter) const;

  /// Sequential helpers; advance the internal counter.
  std::uint64_t next_bits() { return bits(counter_++); }
  double next_uniform() { return uniform(counter_++); }
  /// Standard normal via Box-Muller (consumes two counters).
  double next_normal();
  Vector normal_vector(Eigen::Index n, double scale = 1.0);
  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double scale = 1.0);

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace auxdpo
