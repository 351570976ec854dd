// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The auxdpo Authors

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "auxdpo/config.hpp"
#include "auxdpo/losses.hpp"
#include "auxdpo/optim.hpp"
#include "auxdpo/policy.hpp"
#include "auxdpo/preference.hpp"

namespace auxdpo {

inline constexpr const char* kToolVersion = "0.1.0";

struct ResultRow {
  std::string method;
  Vector theta;
  Vector policy;  // pi_theta over all (s,a)
  double reward = 0.0;
  bool converged = false;
  bool boundary_hit = false;
  bool preference_reversal = false;
  bool reward_reduction = false;
  std::string error;  // nonempty when the method failed
};

struct ResultTable {
  std::string title;
  std::vector<ResultRow> rows;
  std::string spec_hash;
  std::uint64_t seed = 0;
  std::string version = kToolVersion;

  bool ok() const;
};

enum class ToyVariant { imbalanced, balanced };

ToyVariant parse_toy_variant(std::string_view text);
std::string_view to_string(ToyVariant variant);

/// r* = [1, 2, 0] on the three-response toy with the given pair counts.
PreferenceSpec toy_spec(double n12, double n23, double n31, double n13 = 0.0);
PreferenceSpec toy_spec(ToyVariant variant);
std::vector<LossKind> toy_methods(ToyVariant variant);

/// Population losses on the toy policy with beta = 1: grid on [-2, 2]
/// (step 1e-4) for dpo / ipo / dpop, joint null-space descent for auxdpo.
ResultTable run_toy(ToyVariant variant, const std::vector<LossKind>& methods = {});

struct CheckLine {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Table tolerances: theta +-0.02 and reward +-0.01 for dpo / auxdpo,
/// theta +-0.05 and reward +-0.02 for ipo / dpop.
std::vector<CheckLine> check_toy(const ResultTable& table, ToyVariant variant);

struct CountPoint {
  double n12 = 0.0;
  double n23 = 0.0;
  double n31 = 0.0;
};

/// Whitespace- or comma-separated triples, one per line; '#' comments.
std::vector<CountPoint> read_count_grid(std::istream& in);

struct CountSweepRow {
  CountPoint point;
  std::string method;
  double theta = 0.0;
  double reward = 0.0;
  bool preference_reversal = false;
  bool reward_reduction = false;
  bool converged = false;
};

std::vector<CountSweepRow> run_count_sweep(const std::vector<CountPoint>& grid,
                                           const std::vector<LossKind>& methods, double beta = 1.0);

struct BetaRow {
  double beta = 0.0;
  std::string quantity;
  double value = 0.0;
  double predicted_order = 0.0;
};

struct BetaFit {
  std::string quantity;
  double slope = 0.0;
  double predicted_order = 0.0;
  bool within(double tol) const { return std::abs(slope - predicted_order) <= tol; }
};

struct BetaSweep {
  std::vector<BetaRow> rows;
  std::vector<BetaFit> fits;
};

/// Linearization and quadratic-model errors at theta - theta0 = offset / beta
/// on the toy and a random tabular instance, with log-log slope fits.
BetaSweep run_beta_sweep(const std::vector<double>& betas, double offset = 0.3,
                         std::uint64_t seed = 7);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

/// Run every method of a parsed experiment.
ResultTable run_experiment(const ExperimentSpec& spec, std::vector<OptimReport>* reports = nullptr);

/// Geometry summary (rank, nullity, local optimum, min-norm representative).
void write_diagnostics(std::ostream& out, const ExperimentSpec& spec);

// Emitters. All output is byte-deterministic.
void emit_markdown(std::ostream& out, const ResultTable& table);
void emit_csv(std::ostream& out, const ResultTable& table);
void emit_count_sweep_csv(std::ostream& out, const std::vector<CountSweepRow>& rows);
void emit_beta_sweep_csv(std::ostream& out, const std::vector<BetaRow>& rows);
void emit_beta_fits_csv(std::ostream& out, const std::vector<BetaFit>& fits);

}  // namespace auxdpo
