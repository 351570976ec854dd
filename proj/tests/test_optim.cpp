// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The auxdpo Authors

#include <doctest.h>

#include <cmath>
#include <sstream>

#include "auxdpo/experiments.hpp"
#include "auxdpo/geometry.hpp"
#include "auxdpo/losses.hpp"
#include "auxdpo/optim.hpp"
#include "auxdpo/rng.hpp"
#include "test_support.hpp"

using namespace auxdpo;
using auxdpo::testing::max_abs;
using auxdpo::testing::random_spec;

namespace {

Vector scalar(double t) { return Vector::Constant(1, t); }

const RewardVector& toy_reward() {
  static const RewardVector r = [] {
    Vector v(3);
    v << 1.0, 2.0, 0.0;
    return RewardVector(v);
  }();
  return r;
}

OptimConfig grid_config() {
  OptimConfig c;
  c.method = SearchMethod::grid;
  return c;
}

OptimReport toy_run(LossKind kind, const PreferenceSpec& spec, const OptimConfig& config) {
  LossSpec loss;
  loss.kind = kind;
  return minimize_population(loss, ParametricPolicy::toy(), spec, config);
}

Objective quadratic(double center) {
  return [center](const Vector& x, Vector& g) {
    g = 2.0 * (x.array() - center).matrix();
    return (x.array() - center).square().sum();
  };
}

}  // namespace

TEST_CASE("config validation and names") {
  OptimConfig c;
  CHECK_NOTHROW(c.validate());
  c.grid_step = 0.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = OptimConfig{};
  c.grid_lo = 1.0;
  c.grid_hi = 1.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = OptimConfig{};
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = OptimConfig{};
  c.max_iters = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  CHECK(parse_search_method(to_string(SearchMethod::grid)) == SearchMethod::grid);
  CHECK(parse_search_method(to_string(SearchMethod::gd)) == SearchMethod::gd);
  CHECK_THROWS_AS(parse_search_method("newton"), InvalidArgument);
}

TEST_CASE("grid search on a quadratic") {
  OptimConfig c = grid_config();
  c.grid_lo = -5.0;
  c.grid_hi = 5.0;
  c.grid_step = 1e-3;
  const auto rep = minimize(quadratic(3.0), scalar(0.0), c);
  CHECK(std::abs(rep.params(0) - 3.0) < 1e-9);
  CHECK(rep.converged);
  CHECK(!rep.boundary_hit);
  CHECK(minimize(quadratic(9.0), scalar(0.0), c).boundary_hit);
  CHECK_THROWS_AS(minimize(quadratic(0.0), Vector::Zero(2), c), InvalidArgument);
}

TEST_CASE("grid result is below every grid point") {
  const auto spec = toy_spec(5, 5, 50);
  const auto toy = ParametricPolicy::toy();
  for (auto kind : {LossKind::dpo, LossKind::ipo, LossKind::dpop}) {
    const auto rep = toy_run(kind, spec, grid_config());
    LossSpec loss;
    loss.kind = kind;
    bool below = true;
    for (int i = 0; i <= 40000; ++i) {
      const double t = -2.0 + 1e-4 * i;
      below = below && rep.final_loss <= population_loss(loss, toy, scalar(t), spec).value;
    }
    CHECK(below);
    for (std::size_t i = 1; i < rep.trajectory.size(); ++i)
      CHECK(rep.trajectory[i].loss <= rep.trajectory[i - 1].loss);
  }
}

TEST_CASE("toy tables by grid") {
  const auto imb = toy_run(LossKind::dpo, toy_spec(5, 5, 50), grid_config());
  CHECK(std::abs(imb.params(0) - 0.40) <= 0.02);
  CHECK(std::abs(imb.expected_reward - 0.895) <= 0.01);
  Vector pi(3);
  pi << 0.47, 0.21, 0.32;
  CHECK(max_abs(imb.final_policy - pi) <= 0.01);
  CHECK(imb.preference_reversal);
  CHECK(imb.reward_reduction);

  const auto bal = toy_run(LossKind::dpo, toy_spec(ToyVariant::balanced), grid_config());
  CHECK(std::abs(bal.params(0) + 0.43) <= 0.02);
  CHECK(std::abs(bal.expected_reward - 1.17) <= 0.01);
  CHECK(!bal.preference_reversal);
}

TEST_CASE("descent agrees with the grid and never increases the loss") {
  for (const auto& spec : {toy_spec(5, 5, 50), toy_spec(ToyVariant::balanced), toy_spec(50, 5, 5)}) {
    for (auto kind : {LossKind::dpo, LossKind::ipo, LossKind::dpop}) {
      CAPTURE(to_string(kind));
      OptimConfig gd;
      gd.restarts = 3;
      const auto a = toy_run(kind, spec, gd);
      const auto b = toy_run(kind, spec, grid_config());
      CHECK(a.converged);
      CHECK(std::abs(a.params(0) - b.params(0)) <= 2e-4);
      for (std::size_t i = 1; i < a.trajectory.size(); ++i)
        CHECK(a.trajectory[i].loss <= a.trajectory[i - 1].loss + 1e-12 * std::abs(a.trajectory[i - 1].loss));
    }
  }
}

TEST_CASE("descent on a multivariate quadratic with per-coordinate scales") {
  Vector center(3);
  center << 1.0, -2.0, 0.5;
  Objective f = [&](const Vector& x, Vector& g) {
    Vector w(3);
    w << 1.0, 100.0, 0.01;
    g = 2.0 * (w.array() * (x - center).array()).matrix();
    return (w.array() * (x - center).array().square()).sum();
  };
  Vector scales(3);
  scales << 1.0, 0.01, 100.0;
  const auto rep = minimize(f, Vector::Zero(3), OptimConfig{}, scales);
  CHECK(rep.converged);
  CHECK(max_abs(rep.params - center) < 1e-8);
}

TEST_CASE("runs are deterministic") {
  const auto spec = toy_spec(5, 5, 50);
  OptimConfig c;
  c.restarts = 3;
  c.seed = 4;
  const auto a = toy_run(LossKind::ipo, spec, c);
  const auto b = toy_run(LossKind::ipo, spec, c);
  CHECK(a.params == b.params);
  CHECK(a.final_loss == b.final_loss);
  CHECK(a.trajectory.size() == b.trajectory.size());
  const auto x = toy_run(LossKind::auxdpo, spec, c);
  const auto y = toy_run(LossKind::auxdpo, spec, c);
  CHECK(x.params == y.params);
  CHECK(x.aux == y.aux);
}

TEST_CASE("error paths") {
  Objective bad = [](const Vector&, Vector& g) {
    g = Vector::Zero(1);
    return std::nan("");
  };
  CHECK_THROWS_AS(minimize(bad, scalar(0.0), OptimConfig{}), NumericalError);
  CHECK_THROWS_AS(minimize(quadratic(0.0), scalar(std::nan("")), OptimConfig{}), NonFiniteInput);

  Objective linear = [](const Vector& x, Vector& g) {
    g = Vector::Constant(1, -1.0);
    return -x(0);
  };
  OptimConfig short_run;
  short_run.max_iters = 50;
  CHECK(!minimize(linear, scalar(0.0), short_run).converged);

  Objective runaway = [](const Vector& x, Vector& g) {
    g = Vector::Constant(1, -3.0 * x(0) * x(0));
    return -x(0) * x(0) * x(0);
  };
  try {
    minimize(runaway, scalar(1.0), OptimConfig{});
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(!e.trajectory().empty());
  }
  OptimConfig several;
  several.restarts = 3;
  try {
    minimize(runaway, scalar(1.0), several);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(!e.trajectory().empty());
  }
}

TEST_CASE("null-space AuxDPO on the toy tables") {
  const auto imb = toy_run(LossKind::auxdpo, toy_spec(5, 5, 50), OptimConfig{});
  CHECK(imb.converged);
  CHECK(std::abs(imb.params(0) + 0.50) <= 0.02);
  CHECK(std::abs(imb.expected_reward - 1.199) <= 0.01);
  Vector pi(3);
  pi << 0.19, 0.51, 0.30;
  CHECK(max_abs(imb.final_policy - pi) <= 0.011);
  const auto b = geometry_bundle(ParametricPolicy::toy(), 1.0);
  CHECK(max_abs(b.weighted_scores * imb.delta) < 1e-12);
  CHECK(imb.final_loss - entropy_floor(toy_spec(5, 5, 50)) <= 1e-8);
  CHECK(!imb.preference_reversal);
  CHECK(!imb.reward_reduction);

  const auto bal = toy_run(LossKind::auxdpo, toy_spec(ToyVariant::balanced), OptimConfig{});
  CHECK(std::abs(bal.params(0) + 0.50) <= 0.02);
  CHECK(std::abs(bal.expected_reward - 1.20) <= 0.01);

  OptimConfig alt;
  alt.alternating = true;
  const auto a = minimize_auxdpo_nullspace(ParametricPolicy::toy(), toy_spec(5, 5, 50), 1.0, alt);
  CHECK(std::abs(a.params(0) + 0.50) <= 1e-3);
}

TEST_CASE("shift-only null space reduces AuxDPO to DPO") {
  // A softmax class always leaves per-prompt constants in null(A_rho), so the
  // smallest reachable null space is the shifts; tabular classes attain it.
  const auto space = StateActionSpace::uniform(2, 3);
  const auto p = ParametricPolicy::tabular(space, Vector::Zero(6));
  const auto b = geometry_bundle(p, 1.0);
  CHECK(nullspace_basis(b).k == 2);
  const auto spec = random_spec(space, 31);
  const auto aux = minimize_auxdpo_nullspace(p, spec, 1.0, OptimConfig{});
  LossSpec loss;
  const auto dpo = minimize_population(loss, p, spec, OptimConfig{});
  CHECK(aux.aux.lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK(max_abs(aux.params - dpo.params) < 1e-8);
}

TEST_CASE("null-space AuxDPO reaches the entropy floor and the local optimum") {
  const auto space = StateActionSpace::uniform(2, 3);
  CounterRng rng(8, 8);
  const auto p = ParametricPolicy::linear(space, rng.normal_matrix(6, 2), Vector::Zero(2));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto spec = random_spec(space, seed);
    const auto rep = minimize_auxdpo_nullspace(p, spec, 1.0, OptimConfig{});
    CHECK(rep.final_loss - entropy_floor(spec) <= 1e-8);
    CHECK(max_abs(rep.params - rlhf_local_optimum(spec.latent(), geometry_bundle(p, 1.0)).theta) < 1e-6);
  }
}

TEST_CASE("null-space AuxDPO on sampled data") {
  const auto spec = toy_spec(5, 5, 50).scaled(200.0);
  const auto data = aggregate(sample_dataset(spec, 12));
  const auto rep = minimize_auxdpo_nullspace(ParametricPolicy::toy(), data, 1.0, OptimConfig{});
  CHECK(std::abs(rep.params(0) + 0.5) <= 0.05);
  LossSpec loss;
  loss.kind = LossKind::auxdpo;
  const auto via = minimize_empirical(loss, ParametricPolicy::toy(), data, OptimConfig{});
  CHECK(via.params == rep.params);
}

TEST_CASE("penalized AuxDPO") {
  const auto toy = ParametricPolicy::toy();
  const auto data = aggregate(sample_dataset(toy_spec(5, 5, 50).scaled(200.0), 12));
  const auto exact = minimize_auxdpo_nullspace(toy, data, 1.0, OptimConfig{});
  SUBCASE("a large penalty approaches the exact solution") {
    const auto rep = minimize_auxdpo_penalized(toy, data, 1.0, 1e4, OptimConfig{});
    CHECK(std::abs(rep.params(0) - exact.params(0)) <= 0.05);
    CHECK(!rep.constraint_violated);
  }
  SUBCASE("no penalty lets the offsets leave the null space") {
    OptimConfig c;
    c.max_iters = 200;
    const auto rep = minimize_auxdpo_penalized(toy, data, 1.0, 0.0, c, OffsetMode::per_example);
    CHECK(rep.constraint_violated);
    CHECK(rep.constraint_residual > 1e-6);
  }
  SUBCASE("dispatch through the loss spec") {
    LossSpec loss;
    loss.kind = LossKind::auxdpo;
    loss.lambda_penalty = 1e4;
    const auto rep = minimize_empirical(loss, toy, data, OptimConfig{});
    CHECK(std::abs(rep.params(0) - exact.params(0)) <= 0.05);
  }
}

TEST_CASE("batchwise trainer on a small mlp") {
  const auto space = StateActionSpace::uniform(6, 2);
  CounterRng rng(3, 1);
  const auto p = ParametricPolicy::mlp(space, rng.normal_matrix(12, 4), 4, rng.normal_vector(24, 0.5));
  PreferenceSpec spec(space, RewardVector(rng.normal_vector(12)));
  for (std::size_t s = 0; s < 6; ++s) spec.set_count(s, 0, 1, 6);
  const auto data = sample_dataset(spec, 5);
  BatchwiseConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 400;
  const auto rep = train_batchwise_auxdpo(p, data, 1.0, cfg);
  CHECK(std::isfinite(rep.final_loss));
  REQUIRE(rep.null_ratio.size() == 400);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 40; ++i) {
    head += rep.null_ratio[static_cast<std::size_t>(i)];
    tail += rep.null_ratio[static_cast<std::size_t>(360 + i)];
  }
  CHECK(tail < 0.5 * head);
  CHECK(rep.delta.cwiseAbs().maxCoeff() < cfg.knobs.delta_cap);
  const auto again = train_batchwise_auxdpo(p, data, 1.0, cfg);
  CHECK(again.params == rep.params);

  const auto dpo = train_batchwise_dpo(p, data, 1.0, cfg);
  CHECK(dpo.null_ratio.empty());
  CHECK(dpo.delta.size() == 0);
  BatchwiseConfig zero = cfg;
  zero.batch_size = 0;
  CHECK_THROWS_AS(train_batchwise_auxdpo(p, data, 1.0, zero), InvalidArgument);
}

TEST_CASE("preference accuracy") {
  const auto toy = ParametricPolicy::toy();
  PreferenceDataset data;
  data.samples = {{0, 1, 0, 1.0}, {0, 0, 2, 3.0}, {0, 1, 2, 1.0}};
  CHECK(preference_accuracy(toy, scalar(-0.5), data) == doctest::Approx(2.0 / 5.0));
  CHECK(preference_accuracy(toy, scalar(0.0), data) == doctest::Approx(0.5));
}

TEST_CASE("pathology flags agree with the certificate") {
  const auto spec = toy_spec(5, 5, 50);
  for (auto kind : {LossKind::dpo, LossKind::ipo, LossKind::dpop, LossKind::auxdpo}) {
    const auto rep = toy_run(kind, spec, kind == LossKind::auxdpo ? OptimConfig{} : grid_config());
    const auto cert = failure_mode_certificate(ParametricPolicy::toy(), rep.params, toy_reward());
    CHECK(rep.preference_reversal == cert.preference_reversal);
    CHECK(rep.reward_reduction == cert.reward_reduction);
    CHECK(rep.expected_reward == cert.reward);
  }
}

TEST_CASE("report text format") {
  const auto rep = toy_run(LossKind::dpo, toy_spec(5, 5, 50), grid_config());
  std::ostringstream out;
  write_report(out, rep);
  const std::string text = out.str();
  CHECK(text.find("converged = true\n") != std::string::npos);
  CHECK(text.find("preference_reversal = true\n") != std::string::npos);
  const auto blank = text.find("\n\n");
  REQUIRE(blank != std::string::npos);
  CHECK(text.compare(blank + 2, 25, "iteration,loss,grad_norm\n") == 0);
}
