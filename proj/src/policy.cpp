// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The auxdpo Authors

#include "auxdpo/policy.hpp"

#include <algorithm>
#include <utility>

#include "auxdpo/rng.hpp"

namespace auxdpo {

// ---------------------------------------------------------------------------
// StateActionSpace / RewardVector

StateActionSpace::StateActionSpace(std::vector<std::string> prompts,
                                   std::vector<std::string> responses, Vector prompt_dist)
    : prompts_(std::move(prompts)), responses_(std::move(responses)), rho_(std::move(prompt_dist)) {
  if (prompts_.empty() || responses_.empty()) {
    throw InvalidArgument("state-action space needs at least one prompt and one response");
  }
  require_size(rho_, static_cast<Eigen::Index>(prompts_.size()), "prompt distribution");
  require_finite(rho_, "prompt distribution");
  if ((rho_.array() < 0.0).any()) throw InvalidArgument("prompt distribution has negative entries");
  if (std::abs(rho_.sum() - 1.0) > 1e-12) throw InvalidArgument("prompt distribution must sum to 1");
}

StateActionSpace StateActionSpace::uniform(std::size_t num_prompts, std::size_t num_responses) {
  std::vector<std::string> prompts;
  std::vector<std::string> responses;
  for (std::size_t s = 0; s < num_prompts; ++s) prompts.push_back("s" + std::to_string(s + 1));
  for (std::size_t a = 0; a < num_responses; ++a) responses.push_back("a" + std::to_string(a + 1));
  const auto n = static_cast<Eigen::Index>(num_prompts);
  return StateActionSpace(std::move(prompts), std::move(responses),
                          Vector::Constant(n, num_prompts ? 1.0 / static_cast<double>(num_prompts) : 0.0));
}

StateActionSpace StateActionSpace::promptless(std::size_t num_responses) {
  return uniform(1, num_responses);
}

std::size_t StateActionSpace::index(std::size_t s, std::size_t a) const {
  if (s >= num_prompts() || a >= num_responses()) throw InvalidArgument("(s, a) outside the space");
  return s * num_responses() + a;
}

std::optional<std::size_t> StateActionSpace::find_prompt(const std::string& name) const {
  auto it = std::find(prompts_.begin(), prompts_.end(), name);
  if (it == prompts_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - prompts_.begin());
}

std::optional<std::size_t> StateActionSpace::find_response(const std::string& name) const {
  auto it = std::find(responses_.begin(), responses_.end(), name);
  if (it == responses_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - responses_.begin());
}

std::size_t StateActionSpace::prompt_index(const std::string& name) const {
  if (auto s = find_prompt(name)) return *s;
  throw InvalidArgument("unknown prompt '" + name + "'");
}

std::size_t StateActionSpace::response_index(const std::string& name) const {
  if (auto a = find_response(name)) return *a;
  throw InvalidArgument("unknown response '" + name + "'");
}

RewardVector::RewardVector(Vector values) : values_(std::move(values)) {
  require_finite(values_, "reward vector");
}

double RewardVector::at(const StateActionSpace& space, std::size_t s, std::size_t a) const {
  require_size(values_, static_cast<Eigen::Index>(space.size()), "reward vector");
  return values_(static_cast<Eigen::Index>(space.index(s, a)));
}

// ---------------------------------------------------------------------------
// ParametricPolicy

std::string_view to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::tabular_softmax: return "tabular-softmax";
    case PolicyKind::linear_softmax: return "linear-softmax";
    case PolicyKind::mlp_softmax: return "mlp-softmax";
  }
  return "unknown";
}

PolicyKind parse_policy_kind(std::string_view text) {
  if (text == "tabular-softmax" || text == "tabular") return PolicyKind::tabular_softmax;
  if (text == "linear-softmax" || text == "linear") return PolicyKind::linear_softmax;
  if (text == "mlp-softmax" || text == "mlp") return PolicyKind::mlp_softmax;
  throw InvalidArgument("unknown policy kind '" + std::string(text) + "'");
}

std::size_t mlp_parameter_count(std::size_t input_dim, std::size_t hidden) {
  return hidden * input_dim + 2 * hidden;
}

ParametricPolicy::ParametricPolicy(PolicyKind kind, StateActionSpace space, Matrix features,
                                   std::size_t hidden, Vector theta0)
    : kind_(kind),
      space_(std::move(space)),
      features_(std::move(features)),
      hidden_(hidden),
      theta0_(std::move(theta0)) {
  require_finite(theta0_, "reference parameter");
}

ParametricPolicy ParametricPolicy::tabular(StateActionSpace space, Vector theta0) {
  require_size(theta0, static_cast<Eigen::Index>(space.size()), "tabular theta0");
  return ParametricPolicy(PolicyKind::tabular_softmax, std::move(space), Matrix(), 0, std::move(theta0));
}

ParametricPolicy ParametricPolicy::linear(StateActionSpace space, Matrix features, Vector theta0) {
  if (features.rows() != static_cast<Eigen::Index>(space.size())) {
    throw InvalidArgument("linear-softmax features need one row per (s,a)");
  }
  require_size(theta0, features.cols(), "linear theta0");
  if (!features.allFinite()) throw NonFiniteInput("linear-softmax features are not finite");
  return ParametricPolicy(PolicyKind::linear_softmax, std::move(space), std::move(features), 0,
                          std::move(theta0));
}

ParametricPolicy ParametricPolicy::mlp(StateActionSpace space, Matrix inputs, std::size_t hidden,
                                       Vector theta0) {
  if (inputs.rows() != static_cast<Eigen::Index>(space.size())) {
    throw InvalidArgument("mlp-softmax inputs need one row per (s,a)");
  }
  if (hidden == 0) throw InvalidArgument("mlp-softmax hidden width must be positive");
  const auto d = mlp_parameter_count(static_cast<std::size_t>(inputs.cols()), hidden);
  require_size(theta0, static_cast<Eigen::Index>(d), "mlp theta0");
  if (!inputs.allFinite()) throw NonFiniteInput("mlp-softmax inputs are not finite");
  return ParametricPolicy(PolicyKind::mlp_softmax, std::move(space), std::move(inputs), hidden,
                          std::move(theta0));
}

ParametricPolicy ParametricPolicy::toy() {
  Matrix phi(3, 1);
  phi << 1.0, -1.0, 0.0;
  return linear(StateActionSpace::promptless(3), std::move(phi), Vector::Zero(1));
}

ParametricPolicy ParametricPolicy::with_reference(Vector theta0) const {
  require_size(theta0, theta0_.size(), "reference parameter");
  ParametricPolicy out = *this;
  require_finite(theta0, "reference parameter");
  out.theta0_ = std::move(theta0);
  return out;
}

void ParametricPolicy::check_theta(const Vector& theta) const {
  require_size(theta, theta0_.size(), "theta");
  require_finite(theta, "theta");
}

void ParametricPolicy::check_pair(std::size_t s, std::size_t a) const {
  if (s >= space_.num_prompts() || a >= space_.num_responses()) {
    throw InvalidArgument("(s, a) outside the space");
  }
}

namespace {

struct MlpView {
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w1;
  Eigen::Map<const Vector> b1;
  Eigen::Map<const Vector> w2;
};

MlpView mlp_view(const Vector& theta, Eigen::Index p, Eigen::Index h) {
  return MlpView{{theta.data(), h, p}, {theta.data() + h * p, h}, {theta.data() + h * p + h, h}};
}

}  // namespace

Vector ParametricPolicy::logits(const Vector& theta) const {
  check_theta(theta);
  switch (kind_) {
    case PolicyKind::tabular_softmax: return theta;
    case PolicyKind::linear_softmax: return features_ * theta;
    case PolicyKind::mlp_softmax: {
      const auto h = static_cast<Eigen::Index>(hidden_);
      const auto net = mlp_view(theta, features_.cols(), h);
      Matrix pre = features_ * net.w1.transpose();
      pre.rowwise() += net.b1.transpose();
      return pre.array().tanh().matrix() * net.w2;
    }
  }
  return {};
}

Matrix ParametricPolicy::logit_jacobian(const Vector& theta) const {
  check_theta(theta);
  const auto m = static_cast<Eigen::Index>(size());
  switch (kind_) {
    case PolicyKind::tabular_softmax: return Matrix::Identity(m, m);
    case PolicyKind::linear_softmax: return features_;
    case PolicyKind::mlp_softmax: {
      const auto p = features_.cols();
      const auto h = static_cast<Eigen::Index>(hidden_);
      const auto net = mlp_view(theta, p, h);
      Matrix jac(m, theta.size());
      for (Eigen::Index i = 0; i < m; ++i) {
        const Vector t = (net.w1 * features_.row(i).transpose() + net.b1).array().tanh();
        const Vector gate = net.w2.array() * (1.0 - t.array().square());
        for (Eigen::Index j = 0; j < h; ++j) {
          jac.row(i).segment(j * p, p) = gate(j) * features_.row(i);
        }
        jac.row(i).segment(h * p, h) = gate.transpose();
        jac.row(i).segment(h * p + h, h) = t.transpose();
      }
      return jac;
    }
  }
  return {};
}

Vector ParametricPolicy::log_probs(const Vector& theta) const {
  const Vector f = logits(theta);
  const auto na = static_cast<Eigen::Index>(space_.num_responses());
  Vector out(f.size());
  for (Eigen::Index s = 0; s < static_cast<Eigen::Index>(space_.num_prompts()); ++s) {
    const auto block = f.segment(s * na, na);
    const double top = block.maxCoeff();
    const double lse = top + std::log((block.array() - top).exp().sum());
    out.segment(s * na, na) = block.array() - lse;
  }
  if (!out.allFinite()) throw NumericalError("log-probabilities are not finite");
  return out;
}

Vector ParametricPolicy::probs(const Vector& theta) const {
  return log_probs(theta).array().exp();
}

double ParametricPolicy::log_prob(const Vector& theta, std::size_t s, std::size_t a) const {
  check_pair(s, a);
  return log_probs(theta)(static_cast<Eigen::Index>(space_.index(s, a)));
}

Matrix ParametricPolicy::score_matrix(const Vector& theta) const {
  const Matrix jac = logit_jacobian(theta);
  const Vector pi = probs(theta);
  const auto na = static_cast<Eigen::Index>(space_.num_responses());
  Matrix out(jac.cols(), jac.rows());
  for (Eigen::Index s = 0; s < static_cast<Eigen::Index>(space_.num_prompts()); ++s) {
    const auto rows = jac.middleRows(s * na, na);
    const Eigen::RowVectorXd mean = pi.segment(s * na, na).transpose() * rows;
    for (Eigen::Index a = 0; a < na; ++a) {
      out.col(s * na + a) = (rows.row(a) - mean).transpose();
    }
  }
  return out;
}

Vector ParametricPolicy::score(const Vector& theta, std::size_t s, std::size_t a) const {
  check_pair(s, a);
  return score_matrix(theta).col(static_cast<Eigen::Index>(space_.index(s, a)));
}

// ---------------------------------------------------------------------------
// Geometry at theta0 and scalar functionals

GeometryBundle geometry_bundle(const ParametricPolicy& policy, double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw InvalidArgument("beta must be positive and finite");
  GeometryBundle g;
  g.theta0 = policy.theta0();
  g.beta = beta;
  g.scores = policy.score_matrix(g.theta0);
  const Vector pi = policy.probs(g.theta0);
  const auto& space = policy.space();
  g.weights.resize(pi.size());
  for (std::size_t s = 0; s < space.num_prompts(); ++s) {
    for (std::size_t a = 0; a < space.num_responses(); ++a) {
      const auto i = static_cast<Eigen::Index>(space.index(s, a));
      g.weights(i) = space.prompt_dist()(static_cast<Eigen::Index>(s)) * pi(i);
    }
  }
  g.weighted_scores = g.scores * g.weights.asDiagonal();
  g.fisher = g.weighted_scores * g.scores.transpose();
  g.fisher = (0.5 * (g.fisher + g.fisher.transpose())).eval();
  if (!g.scores.allFinite() || !g.fisher.allFinite()) {
    throw NumericalError("geometry bundle has non-finite entries");
  }
  return g;
}

Matrix monte_carlo_fisher(const ParametricPolicy& policy, const Vector& theta, std::size_t samples,
                          std::uint64_t seed) {
  if (samples == 0) throw InvalidArgument("Monte-Carlo Fisher needs at least one sample");
  const auto& space = policy.space();
  const Matrix scores = policy.score_matrix(theta);
  const Vector pi = policy.probs(theta);
  const auto na = space.num_responses();
  // Count draws per (s,a), then form the weighted outer-product sum once.
  Vector hits = Vector::Zero(pi.size());
  CounterRng rng(seed, 0xF15);
  for (std::size_t k = 0; k < samples; ++k) {
    double u = rng.next_uniform();
    std::size_t s = 0;
    for (; s + 1 < space.num_prompts(); ++s) {
      u -= space.prompt_dist()(static_cast<Eigen::Index>(s));
      if (u < 0.0) break;
    }
    double v = rng.next_uniform();
    std::size_t a = 0;
    for (; a + 1 < na; ++a) {
      v -= pi(static_cast<Eigen::Index>(space.index(s, a)));
      if (v < 0.0) break;
    }
    hits(static_cast<Eigen::Index>(space.index(s, a))) += 1.0;
  }
  hits /= static_cast<double>(samples);
  return scores * hits.asDiagonal() * scores.transpose();
}

RewardVector implicit_reward(const ParametricPolicy& policy, const Vector& theta, double beta) {
  if (!(beta > 0.0)) throw InvalidArgument("beta must be positive");
  return RewardVector(beta * (policy.log_probs(theta) - policy.log_probs(policy.theta0())));
}

double expected_reward(const ParametricPolicy& policy, const Vector& theta, const RewardVector& r) {
  const auto& space = policy.space();
  require_size(r.values(), static_cast<Eigen::Index>(space.size()), "reward vector");
  const Vector pi = policy.probs(theta);
  double total = 0.0;
  for (std::size_t s = 0; s < space.num_prompts(); ++s) {
    double inner = 0.0;
    for (std::size_t a = 0; a < space.num_responses(); ++a) {
      const auto i = static_cast<Eigen::Index>(space.index(s, a));
      inner += pi(i) * r.values()(i);
    }
    total += space.prompt_dist()(static_cast<Eigen::Index>(s)) * inner;
  }
  return total;
}

double kl_to_ref(const ParametricPolicy& policy, const Vector& theta) {
  const auto& space = policy.space();
  const Vector logp = policy.log_probs(theta);
  const Vector logq = policy.log_probs(policy.theta0());
  double total = 0.0;
  for (std::size_t s = 0; s < space.num_prompts(); ++s) {
    double inner = 0.0;
    for (std::size_t a = 0; a < space.num_responses(); ++a) {
      const auto i = static_cast<Eigen::Index>(space.index(s, a));
      inner += std::exp(logp(i)) * (logp(i) - logq(i));
    }
    total += space.prompt_dist()(static_cast<Eigen::Index>(s)) * std::max(inner, 0.0);
  }
  return total;
}

double rlhf_objective(const ParametricPolicy& policy, const Vector& theta, const RewardVector& r,
                      double beta) {
  return expected_reward(policy, theta, r) - beta * kl_to_ref(policy, theta);
}

Vector gibbs_policy(const ParametricPolicy& policy, const RewardVector& r, double beta) {
  if (!(beta > 0.0)) throw InvalidArgument("beta must be positive");
  const auto& space = policy.space();
  require_size(r.values(), static_cast<Eigen::Index>(space.size()), "reward vector");
  const Vector tilted = policy.log_probs(policy.theta0()) + r.values() / beta;
  const auto na = static_cast<Eigen::Index>(space.num_responses());
  Vector out(tilted.size());
  for (Eigen::Index s = 0; s < static_cast<Eigen::Index>(space.num_prompts()); ++s) {
    const auto block = tilted.segment(s * na, na);
    const double top = block.maxCoeff();
    const Vector e = (block.array() - top).exp();
    out.segment(s * na, na) = e / e.sum();
  }
  return out;
}

}  // namespace auxdpo
