// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The auxdpo Authors

#include <doctest.h>

#include <cmath>
#include <vector>

#include "auxdpo/experiments.hpp"
#include "auxdpo/geometry.hpp"
#include "auxdpo/losses.hpp"
#include "auxdpo/optim.hpp"
#include "auxdpo/rng.hpp"
#include "test_support.hpp"

using namespace auxdpo;
using auxdpo::testing::all_kinds;
using auxdpo::testing::kkt_min_norm;
using auxdpo::testing::max_abs;
using auxdpo::testing::random_policy;
using auxdpo::testing::random_spec;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

double d_norm(const Vector& r, const Vector& weights) { return std::sqrt(r.dot(weights.asDiagonal() * r)); }

const RewardVector kToyReward(vec({1.0, 2.0, 0.0}));

}  // namespace

TEST_CASE("toy null space") {
  const auto b = geometry_bundle(ParametricPolicy::toy(), 1.0);
  CHECK(max_abs(b.weighted_scores - vec({1.0 / 3, -1.0 / 3, 0.0}).transpose()) < 1e-15);
  const auto nb = nullspace_basis(b);
  CHECK(nb.k == 2);
  CHECK(nb.rank == 1);
  CHECK(!nb.ambiguous);
  CHECK(max_abs(b.weighted_scores * nb.gamma) < 1e-10);
  CHECK(max_abs(nb.gamma.transpose() * nb.gamma - Matrix::Identity(2, 2)) < 1e-10);
  Matrix expected(3, 2);
  expected << 1.0 / std::sqrt(2.0), 0.0, 1.0 / std::sqrt(2.0), 0.0, 0.0, 1.0;
  CHECK(max_abs(nb.gamma * nb.gamma.transpose() - expected * expected.transpose()) < 1e-10);
}

TEST_CASE("null space corner cases") {
  const auto zero = nullspace_basis(Matrix::Zero(2, 4));
  CHECK(zero.k == 4);
  CHECK(max_abs(zero.gamma - Matrix::Identity(4, 4)) == 0.0);
  Matrix full(3, 3);
  full << 2, 1, 0, 0, 1, 0, 1, 0, 3;
  const auto none = nullspace_basis(full);
  CHECK(none.k == 0);
  CHECK(none.gamma.cols() == 0);
  Matrix near(1, 2);
  near << 1.0, 0.0;
  Matrix tiny(2, 2);
  tiny << 1.0, 0.0, 0.0, 5e-10;
  CHECK(nullspace_basis(tiny).ambiguous);
  CHECK(!nullspace_basis(near).ambiguous);
}

TEST_CASE("null basis invariants on random bundles") {
  for (auto kind : all_kinds()) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto b = geometry_bundle(random_policy(kind, seed, 2, 4), 1.0);
      const auto nb = nullspace_basis(b);
      CHECK(nb.k + nb.rank == b.size());
      CHECK(static_cast<std::size_t>(nb.gamma.cols()) == nb.k);
      CHECK(max_abs(b.weighted_scores * nb.gamma) < 1e-10);
      CHECK(max_abs(nb.gamma.transpose() * nb.gamma - Matrix::Identity(nb.gamma.cols(), nb.gamma.cols())) < 1e-10);
      // Per-prompt constants are always in the null space of a softmax class.
      CHECK(nb.k >= 2);
    }
  }
}

TEST_CASE("equivalence classes on the toy") {
  const auto b = geometry_bundle(ParametricPolicy::toy(), 1.0);
  CHECK(same_equivalence_class(kToyReward, kToyReward, b));
  for (double c : {-3.0, 0.5, 7.0}) {
    for (double c2 : {-1.0, 2.0}) {
      const RewardVector moved(kToyReward.values() + c * vec({1, 1, 0}) + c2 * vec({0, 0, 1}));
      CHECK(same_equivalence_class(kToyReward, moved, b));
    }
  }
  CHECK(!same_equivalence_class(kToyReward, RewardVector(vec({2.0, 2.0, 0.0})), b));
}

TEST_CASE("equivalence is reflexive, symmetric and transitive on constructed members") {
  for (auto kind : all_kinds()) {
    const auto b = geometry_bundle(random_policy(kind, 3, 2, 4), 1.0);
    const auto nb = nullspace_basis(b);
    CounterRng rng(3, 9);
    const Vector r = rng.normal_vector(8);
    const RewardVector r1(r), r2(r + nb.gamma * rng.normal_vector(nb.gamma.cols())),
        r3(r + nb.gamma * rng.normal_vector(nb.gamma.cols()));
    CHECK(same_equivalence_class(r1, r1, b));
    CHECK(same_equivalence_class(r1, r2, b) == same_equivalence_class(r2, r1, b));
    CHECK(same_equivalence_class(r1, r2, b));
    CHECK(same_equivalence_class(r2, r3, b));
    CHECK(same_equivalence_class(r1, r3, b));
  }
}

TEST_CASE("min-norm representative on the toy") {
  const auto b = geometry_bundle(ParametricPolicy::toy(), 1.0);
  CHECK(min_norm_representative(vec({0.0}), b).reward.values().cwiseAbs().maxCoeff() == 0.0);
  const auto rep = min_norm_representative(vec({0.4}), b);
  CHECK(max_abs(rep.reward.values() - vec({0.4, -0.4, 0.0})) < 1e-15);
  CHECK(!rep.degenerate);
  const Vector kkt = kkt_min_norm(b.weighted_scores, b.weights, b.beta * b.fisher * vec({0.4}));
  CHECK(max_abs(rep.reward.values() - kkt) < 1e-12);
}

TEST_CASE("min-norm representative against the KKT oracle") {
  for (auto kind : all_kinds()) {
    for (std::uint64_t seed = 0; seed < 7; ++seed) {
      const auto p = random_policy(kind, 50 + seed);
      CounterRng rng(50 + seed, 4);
      const double beta = 0.5 + 3.0 * rng.next_uniform();
      const auto b = geometry_bundle(p, beta);
      const Vector theta = p.theta0() + rng.normal_vector(static_cast<Eigen::Index>(p.dim()), 0.3);
      const auto rep = min_norm_representative(theta, b);
      const Vector closed = beta * b.scores.transpose() * (theta - p.theta0());
      const Vector rhs = beta * b.fisher * (theta - p.theta0());
      CHECK(max_abs(rep.reward.values() - closed) < 1e-8);
      CHECK(max_abs(rep.reward.values() - kkt_min_norm(b.weighted_scores, b.weights, rhs)) < 1e-8);
      CHECK(max_abs(b.weighted_scores * rep.reward.values() - rhs) < 1e-8);
      CHECK(equivalence_class(theta, b).contains(rep.reward, b));

      const auto nb = nullspace_basis(b);
      const double base = d_norm(rep.reward.values(), b.weights);
      for (int i = 0; i < 100; ++i) {
        const Vector moved = rep.reward.values() + nb.gamma * rng.normal_vector(nb.gamma.cols());
        CHECK(equivalence_class(theta, b).contains(RewardVector(moved), b));
        CHECK(base < d_norm(moved, b.weights));
      }
    }
  }
}

TEST_CASE("symmetric pseudoinverse") {
  Matrix s(2, 2);
  s << 2.0, 0.0, 0.0, 0.0;
  bool deficient = false;
  const Matrix p = symmetric_pinv(s, 1e-10, &deficient);
  CHECK(deficient);
  CHECK(p(0, 0) == doctest::Approx(0.5));
  CHECK(p(1, 1) == 0.0);
  Matrix full(2, 2);
  full << 2.0, 1.0, 1.0, 2.0;
  CHECK(max_abs(symmetric_pinv(full, 1e-10, &deficient) * full - Matrix::Identity(2, 2)) < 1e-14);
  CHECK(!deficient);
}

TEST_CASE("RLHF local optimum") {
  const auto b = geometry_bundle(ParametricPolicy::toy(), 1.0);
  CHECK(rlhf_local_optimum(RewardVector::zeros(3), b).theta(0) == 0.0);
  CHECK(std::abs(rlhf_local_optimum(kToyReward, b).theta(0) + 0.5) < 1e-15);
  for (double beta : {2.0, 10.0}) {
    CHECK(std::abs(rlhf_local_optimum(kToyReward, geometry_bundle(ParametricPolicy::toy(), beta)).theta(0) +
                   1.0 / (2.0 * beta)) < 1e-15);
  }
  for (auto kind : all_kinds()) {
    const auto p = random_policy(kind, 21);
    const auto bb = geometry_bundle(p, 1.3);
    const auto nb = nullspace_basis(bb);
    CounterRng rng(21, 0);
    const Vector r = rng.normal_vector(6);
    const auto opt = rlhf_local_optimum(RewardVector(r), bb);
    CHECK(opt.residual <= 1e-8);
    const auto moved = rlhf_local_optimum(RewardVector(r + nb.gamma * rng.normal_vector(nb.gamma.cols(), 3.0)), bb);
    CHECK(max_abs(opt.theta - moved.theta) < 1e-10);
    CHECK(opt.rank_deficient == (kind != PolicyKind::linear_softmax));
  }
}

TEST_CASE("KL projection oracle on the toy") {
  const auto toy = ParametricPolicy::toy();
  const auto proj = kl_projection_oracle(toy_spec(5, 5, 50), toy, 1.0);
  CHECK(std::abs(proj.theta(0) - 0.40) <= 0.02);
  CHECK(!proj.boundary);
  const Vector r = proj.reward.values();
  CHECK(std::abs((r(0) - r(2)) - proj.theta(0)) < 1e-12);
  CHECK(std::abs((r(1) - r(2)) + proj.theta(0)) < 1e-12);
  CHECK(proj.excess > 0.0);
  CHECK(kl_projection_oracle(toy_spec(50, 5, 5), toy, 1.0).theta(0) < 0.0);

  ProjectionOptions narrow;
  narrow.grid_lo = -0.1;
  narrow.grid_hi = 0.1;
  CHECK(kl_projection_oracle(toy_spec(5, 5, 50), toy, 1.0, narrow).boundary);
}

TEST_CASE("KL projection of a realizable reward is exact") {
  const auto space = StateActionSpace::uniform(2, 3);
  const auto p = ParametricPolicy::tabular(space, Vector::Zero(6));
  const auto spec = random_spec(space, 77);
  ProjectionOptions opts;
  opts.starts = 4;
  const auto proj = kl_projection_oracle(spec, p, 1.0, opts);
  CHECK(proj.excess <= 1e-10);
  const Vector diff = proj.reward.values() - spec.latent().values();
  for (int s = 0; s < 2; ++s) {
    const Vector block = diff.segment(3 * s, 3);
    CHECK((block.array() - block.mean()).abs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("projection oracle agrees with the DPO minimizer") {
  CounterRng rng(5, 5);
  const auto toy = ParametricPolicy::toy();
  for (int i = 0; i < 10; ++i) {
    const double n12 = 1 + std::floor(30 * rng.next_uniform());
    const double n23 = 1 + std::floor(30 * rng.next_uniform());
    const double n31 = 1 + std::floor(30 * rng.next_uniform());
    const auto spec = toy_spec(n12, n23, n31);
    LossSpec loss;
    OptimConfig cfg;  // descent, not the grid the oracle uses
    const auto rep = minimize_population(loss, toy, spec, cfg);
    CHECK(std::abs(kl_projection_oracle(spec, toy, 1.0).theta(0) - rep.params(0)) <= 2e-4);
  }
}

TEST_CASE("projection oracle agrees on a two-parameter class") {
  const auto space = StateActionSpace::uniform(1, 4);
  CounterRng rng(13, 1);
  const auto p = ParametricPolicy::linear(space, rng.normal_matrix(4, 2), Vector::Zero(2));
  const auto spec = random_spec(space, 13);
  const auto proj = kl_projection_oracle(spec, p, 1.0);
  LossSpec loss;
  const auto rep = minimize_population(loss, p, spec, OptimConfig{});
  CHECK(max_abs(proj.theta - rep.params) < 1e-4);
  CHECK(std::abs(proj.excess - (rep.final_loss - entropy_floor(spec))) < 1e-8);
}

TEST_CASE("linearization error") {
  const auto toy = ParametricPolicy::toy();
  CHECK(linearization_error(toy, vec({0.0}), 3.0).cwiseAbs().maxCoeff() == 0.0);
  std::vector<double> betas{1, 10, 100, 1000}, errs;
  for (double beta : betas) errs.push_back(linearization_error(toy, vec({0.3 / beta}), beta).cwiseAbs().maxCoeff());
  for (std::size_t i = 1; i < errs.size(); ++i) {
    const double ratio = errs[i - 1] / errs[i];
    CHECK(ratio > 10.0 / 2.0);
    CHECK(ratio < 10.0 * 2.0);
  }
  // Log-softmax Hessians have spectral norm at most 1/2 in the logits.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = random_policy(PolicyKind::tabular_softmax, seed, 2, 4);
    CounterRng rng(seed, 8);
    const Vector theta = p.theta0() + rng.normal_vector(8, 0.5);
    const double beta = 2.0;
    const double bound = 0.5 * beta * 0.5 * (theta - p.theta0()).squaredNorm();
    CHECK(linearization_error(p, theta, beta).cwiseAbs().maxCoeff() <= bound);
  }
}

TEST_CASE("objective quadratic error") {
  const auto toy = ParametricPolicy::toy();
  CHECK(objective_quadratic_error(toy, vec({0.0}), 2.0, kToyReward) == 0.0);
  std::vector<double> errs;
  for (double beta : {1.0, 10.0, 100.0, 1000.0})
    errs.push_back(objective_quadratic_error(toy, vec({0.3 / beta}), beta, kToyReward));
  for (std::size_t i = 1; i < errs.size(); ++i) {
    const double ratio = errs[i - 1] / errs[i];
    CHECK(ratio > 100.0 / 2.0);
    CHECK(ratio < 100.0 * 2.0);
  }
  // Without reward only the KL remainder is left: bounded by M2 |dt|^3 / 6,
  // with M2 the largest third derivative of beta * KL along the segment.
  const double beta = 1.0, t = 0.4;
  auto kl = [&](double x) { return beta * kl_to_ref(toy, vec({x})); };
  double m2 = 0.0;
  const double h = 1e-2;
  for (double x = 0.0; x <= t; x += t / 40) {
    const double third = (kl(x + 2 * h) - 2 * kl(x + h) + 2 * kl(x - h) - kl(x - 2 * h)) / (2 * h * h * h);
    m2 = std::max(m2, std::abs(third));
  }
  const double err = objective_quadratic_error(toy, vec({t}), beta, RewardVector::zeros(3));
  CHECK(err > 0.0);
  CHECK(err <= 1.05 * m2 * t * t * t / 6.0);
}

TEST_CASE("failure-mode certificate on the toy") {
  const auto toy = ParametricPolicy::toy();
  const auto dpo = failure_mode_certificate(toy, vec({0.40}), kToyReward);
  CHECK(dpo.all());
  const Vector pi = toy.probs(vec({0.40}));
  CHECK(pi(0) > pi(1));
  CHECK(pi(0) > pi(2));
  CHECK(dpo.reward < dpo.reference_reward);
  const auto aux = failure_mode_certificate(toy, vec({-0.5}), kToyReward);
  CHECK(aux.none());
  CHECK(aux.reward > 1.0);
  CHECK(aux.reference_reward == doctest::Approx(1.0));
  CHECK(failure_mode_certificate(toy, vec({0.0}), kToyReward).none());
}
