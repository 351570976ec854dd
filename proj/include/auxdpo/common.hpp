// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The auxdpo Authors

#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace auxdpo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Dimension mismatches, malformed configuration, out-of-range indices.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A NaN or infinity was supplied where a finite value is required.
class NonFiniteInput : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A computation produced a non-finite or otherwise unusable result.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline bool all_finite(const Vector& v) { return v.allFinite(); }

inline void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) throw NonFiniteInput(std::string(what) + " contains non-finite entries");
}

inline void require_size(const Vector& v, Eigen::Index n, const char* what) {
  if (v.size() != n) {
    throw InvalidArgument(std::string(what) + ": expected length " + std::to_string(n) +
                          ", got " + std::to_string(v.size()));
  }
}

/// Logistic sigmoid, evaluated without overflow for either sign.
inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(sigmoid(z)) = -softplus(-z).
inline double log_sigmoid(double z) {
  if (z >= 0.0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

/// Bernoulli KL divergence d(p || q).
inline double bernoulli_kl(double p, double q) {
  double out = 0.0;
  if (p > 0.0) out += p * std::log(p / q);
  if (p < 1.0) out += (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
  return out;
}

inline double bernoulli_entropy(double p) {
  double out = 0.0;
  if (p > 0.0) out -= p * std::log(p);
  if (p < 1.0) out -= (1.0 - p) * std::log1p(-p);
  return out;
}

}  // namespace auxdpo
