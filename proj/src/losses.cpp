// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The auxdpo Authors

#include "auxdpo/losses.hpp"

#include <string>
#include <vector>

namespace auxdpo {

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::dpo: return "dpo";
    case LossKind::ipo: return "ipo";
    case LossKind::dpop: return "dpop";
    case LossKind::auxdpo: return "auxdpo";
  }
  return "unknown";
}

LossKind parse_loss_kind(std::string_view text) {
  if (text == "dpo") return LossKind::dpo;
  if (text == "ipo") return LossKind::ipo;
  if (text == "dpop") return LossKind::dpop;
  if (text == "auxdpo") return LossKind::auxdpo;
  throw InvalidArgument("unknown loss '" + std::string(text) + "'");
}

void LossSpec::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw InvalidArgument("beta must be positive");
  if (lambda_penalty < 0.0 || lambda_null < 0.0 || lambda_amp < 0.0 || lambda_pos < 0.0) {
    throw InvalidArgument("loss penalties must be nonnegative");
  }
  if (!(delta_cap > 0.0)) throw InvalidArgument("delta_cap must be positive");
  if (tau < 0.0) throw InvalidArgument("tau must be positive (or 0 for beta)");
}

namespace {

constexpr double kLogFloor = -690.7755278982137;  // log(1e-300)

/// One logistic term on the margin z = R(s, first) - R(s, second):
/// weight * [target * (-log sigma(z)) + (1 - target) * (-log sigma(-z))].
struct Term {
  Eigen::Index first = 0;
  Eigen::Index second = 0;
  double weight = 0.0;
  double target = 1.0;
};

std::vector<Term> population_terms(const PreferenceSpec& spec) {
  spec.validate();
  std::vector<Term> terms;
  const auto& space = spec.space();
  for (const auto& [k, n] : spec.counts()) {
    terms.push_back({static_cast<Eigen::Index>(space.index(k.prompt, k.first)),
                     static_cast<Eigen::Index>(space.index(k.prompt, k.second)), n,
                     btl_prob(spec.latent(), space, k.prompt, k.first, k.second)});
  }
  return terms;
}

std::vector<Term> empirical_terms(const PreferenceDataset& data, const StateActionSpace& space) {
  if (data.empty()) throw InvalidArgument("empirical loss needs a nonempty dataset");
  validate_dataset(data, space);
  std::vector<Term> terms;
  terms.reserve(data.size());
  for (const auto& c : data.samples) {
    terms.push_back({static_cast<Eigen::Index>(space.index(c.prompt, c.chosen)),
                     static_cast<Eigen::Index>(space.index(c.prompt, c.rejected)), c.weight, 1.0});
  }
  return terms;
}

void check_beta(double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw InvalidArgument("beta must be positive");
}

double clamped_log_sigmoid(double z, bool& clamped) {
  const double v = log_sigmoid(z);
  if (v < kLogFloor) {
    clamped = true;
    return kLogFloor;
  }
  return v;
}

/// Cross-entropy over the terms. `shift_first`/`shift_second` are optional
/// per-term margin offsets applied to the two directions separately
/// (used by DPOP); their gradients are accumulated into `d_shift_*`.
struct LogisticEval {
  double value = 0.0;
  Vector d_reward;  // dL/dR, length m
  bool clamped = false;
};

LogisticEval logistic_terms(const std::vector<Term>& terms, const Vector& reward) {
  LogisticEval out;
  out.d_reward = Vector::Zero(reward.size());
  for (const auto& t : terms) {
    const double z = reward(t.first) - reward(t.second);
    double v = 0.0;
    if (t.target > 0.0) v -= t.target * clamped_log_sigmoid(z, out.clamped);
    if (t.target < 1.0) v -= (1.0 - t.target) * clamped_log_sigmoid(-z, out.clamped);
    out.value += t.weight * v;
    const double dz = t.weight * (sigmoid(z) - t.target);
    out.d_reward(t.first) += dz;
    out.d_reward(t.second) -= dz;
  }
  if (!std::isfinite(out.value)) throw NumericalError("logistic loss is not finite");
  return out;
}

struct PolicyState {
  Vector reward;  // r_theta^beta
  Vector log_probs;
  Vector ref_log_probs;
};

PolicyState policy_state(const ParametricPolicy& policy, const Vector& theta, double beta) {
  PolicyState st;
  st.log_probs = policy.log_probs(theta);
  st.ref_log_probs = policy.log_probs(policy.theta0());
  st.reward = beta * (st.log_probs - st.ref_log_probs);
  return st;
}

LossValue finish(const ParametricPolicy& policy, const Vector& theta, double beta,
                 const LogisticEval& eval) {
  LossValue out;
  out.value = eval.value;
  out.clamped = eval.clamped;
  out.grad = beta * (policy.score_matrix(theta) * eval.d_reward);
  return out;
}

LossValue dpo_terms(const ParametricPolicy& policy, const Vector& theta,
                    const std::vector<Term>& terms, double beta) {
  check_beta(beta);
  const auto st = policy_state(policy, theta, beta);
  return finish(policy, theta, beta, logistic_terms(terms, st.reward));
}

LossValue ipo_terms(const ParametricPolicy& policy, const Vector& theta,
                    const std::vector<Term>& terms, double beta, double tau) {
  check_beta(beta);
  if (!(tau > 0.0)) throw InvalidArgument("IPO tau must be positive");
  const auto st = policy_state(policy, theta, beta);
  const double goal = 1.0 / (2.0 * tau);
  LogisticEval eval;
  eval.d_reward = Vector::Zero(st.reward.size());
  for (const auto& t : terms) {
    const double h = (st.reward(t.first) - st.reward(t.second)) / beta;
    const double up = h - goal;
    const double down = -h - goal;
    eval.value += t.weight * (t.target * up * up + (1.0 - t.target) * down * down);
    const double dh = t.weight * (2.0 * t.target * up - 2.0 * (1.0 - t.target) * down);
    eval.d_reward(t.first) += dh / beta;
    eval.d_reward(t.second) -= dh / beta;
  }
  if (!std::isfinite(eval.value)) throw NumericalError("IPO loss is not finite");
  return finish(policy, theta, beta, eval);
}

LossValue dpop_terms(const ParametricPolicy& policy, const Vector& theta,
                     const std::vector<Term>& terms, double beta, double lambda_pos) {
  check_beta(beta);
  if (lambda_pos < 0.0) throw InvalidArgument("lambda_pos must be nonnegative");
  const auto st = policy_state(policy, theta, beta);
  const Vector deficit = (st.ref_log_probs - st.log_probs).cwiseMax(0.0);
  const double scale = beta * lambda_pos;

  LogisticEval eval;
  eval.d_reward = Vector::Zero(st.reward.size());
  Vector d_deficit = Vector::Zero(st.reward.size());
  for (const auto& t : terms) {
    const double z = st.reward(t.first) - st.reward(t.second);
    // first preferred, with its hinge
    if (t.target > 0.0) {
      const double x = z - scale * deficit(t.first);
      eval.value -= t.weight * t.target * clamped_log_sigmoid(x, eval.clamped);
      const double dx = t.weight * t.target * (sigmoid(x) - 1.0);
      eval.d_reward(t.first) += dx;
      eval.d_reward(t.second) -= dx;
      d_deficit(t.first) -= scale * dx;
    }
    // second preferred
    if (t.target < 1.0) {
      const double x = -z - scale * deficit(t.second);
      eval.value -= t.weight * (1.0 - t.target) * clamped_log_sigmoid(x, eval.clamped);
      const double dx = t.weight * (1.0 - t.target) * (sigmoid(x) - 1.0);
      eval.d_reward(t.second) += dx;
      eval.d_reward(t.first) -= dx;
      d_deficit(t.second) -= scale * dx;
    }
  }
  if (!std::isfinite(eval.value)) throw NumericalError("DPOP loss is not finite");
  // d deficit / d theta = -score where the hinge is active.
  Vector d_logp = beta * eval.d_reward;
  for (Eigen::Index i = 0; i < deficit.size(); ++i) {
    if (deficit(i) > 0.0) d_logp(i) -= d_deficit(i);
  }
  LossValue out;
  out.value = eval.value;
  out.clamped = eval.clamped;
  out.grad = policy.score_matrix(theta) * d_logp;
  return out;
}

}  // namespace

LossValue dpo_population_loss(const ParametricPolicy& policy, const Vector& theta,
                              const PreferenceSpec& spec, double beta) {
  return dpo_terms(policy, theta, population_terms(spec), beta);
}

LossValue dpo_empirical_loss(const ParametricPolicy& policy, const Vector& theta,
                             const PreferenceDataset& data, double beta) {
  return dpo_terms(policy, theta, empirical_terms(data, policy.space()), beta);
}

LossValue ipo_population_loss(const ParametricPolicy& policy, const Vector& theta,
                              const PreferenceSpec& spec, double beta, double tau) {
  return ipo_terms(policy, theta, population_terms(spec), beta, tau);
}

LossValue ipo_empirical_loss(const ParametricPolicy& policy, const Vector& theta,
                             const PreferenceDataset& data, double beta, double tau) {
  return ipo_terms(policy, theta, empirical_terms(data, policy.space()), beta, tau);
}

LossValue dpop_population_loss(const ParametricPolicy& policy, const Vector& theta,
                               const PreferenceSpec& spec, double beta, double lambda_pos) {
  return dpop_terms(policy, theta, population_terms(spec), beta, lambda_pos);
}

LossValue dpop_empirical_loss(const ParametricPolicy& policy, const Vector& theta,
                              const PreferenceDataset& data, double beta, double lambda_pos) {
  return dpop_terms(policy, theta, empirical_terms(data, policy.space()), beta, lambda_pos);
}

LossValue auxdpo_population_loss(const ParametricPolicy& policy, const Vector& theta,
                                 const Vector& delta, const PreferenceSpec& spec, double beta) {
  check_beta(beta);
  require_size(delta, static_cast<Eigen::Index>(policy.size()), "AuxDPO population delta");
  require_finite(delta, "AuxDPO delta");
  const auto st = policy_state(policy, theta, beta);
  const auto eval = logistic_terms(population_terms(spec), st.reward + delta);
  LossValue out = finish(policy, theta, beta, eval);
  out.aux_grad = eval.d_reward;
  return out;
}

LossValue auxdpo_empirical_loss(const ParametricPolicy& policy, const Vector& theta,
                                const Vector& delta, const PreferenceDataset& data, double beta,
                                double lambda, const GeometryBundle& bundle) {
  check_beta(beta);
  if (lambda < 0.0) throw InvalidArgument("AuxDPO penalty must be nonnegative");
  const auto terms = empirical_terms(data, policy.space());
  const auto n = static_cast<Eigen::Index>(terms.size());
  require_size(delta, 2 * n, "AuxDPO empirical delta");
  require_finite(delta, "AuxDPO delta");
  if (bundle.size() != policy.size()) throw InvalidArgument("geometry bundle does not match policy");

  const auto st = policy_state(policy, theta, beta);
  const double total = data.total_weight();
  if (!(total > 0.0)) throw InvalidArgument("dataset has zero total weight");

  LossValue out;
  Vector d_reward = Vector::Zero(st.reward.size());
  out.aux_grad = Vector::Zero(2 * n);
  Vector moment = Vector::Zero(bundle.scores.rows());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = terms[static_cast<std::size_t>(i)];
    const double x = st.reward(t.first) - st.reward(t.second) + delta(2 * i) - delta(2 * i + 1);
    out.value -= t.weight / total * clamped_log_sigmoid(x, out.clamped);
    const double dx = t.weight / total * (sigmoid(x) - 1.0);
    d_reward(t.first) += dx;
    d_reward(t.second) -= dx;
    out.aux_grad(2 * i) += dx;
    out.aux_grad(2 * i + 1) -= dx;
    moment += t.weight * (delta(2 * i) * bundle.scores.col(t.first) +
                          delta(2 * i + 1) * bundle.scores.col(t.second));
  }
  moment /= 2.0 * total;
  out.value += lambda * moment.squaredNorm();
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = terms[static_cast<std::size_t>(i)];
    const double c = 2.0 * lambda * t.weight / (2.0 * total);
    out.aux_grad(2 * i) += c * moment.dot(bundle.scores.col(t.first));
    out.aux_grad(2 * i + 1) += c * moment.dot(bundle.scores.col(t.second));
  }
  if (!std::isfinite(out.value)) throw NumericalError("AuxDPO loss is not finite");
  out.grad = beta * (policy.score_matrix(theta) * d_reward);
  return out;
}

LossValue auxdpo_tied_loss(const ParametricPolicy& policy, const Vector& theta, const Vector& delta,
                           const PreferenceDataset& data, double beta, double lambda,
                           const GeometryBundle& bundle) {
  check_beta(beta);
  if (lambda < 0.0) throw InvalidArgument("AuxDPO penalty must be nonnegative");
  require_size(delta, static_cast<Eigen::Index>(policy.size()), "AuxDPO tied delta");
  require_finite(delta, "AuxDPO delta");
  if (bundle.size() != policy.size()) throw InvalidArgument("geometry bundle does not match policy");
  const auto st = policy_state(policy, theta, beta);
  const auto eval = logistic_terms(empirical_terms(data, policy.space()), st.reward + delta);
  LossValue out = finish(policy, theta, beta, eval);
  const Vector residual = bundle.weighted_scores * delta;
  out.value += lambda * residual.squaredNorm();
  out.aux_grad = eval.d_reward + 2.0 * lambda * (bundle.weighted_scores.transpose() * residual);
  return out;
}

Vector capped_delta(const Vector& raw, double delta_cap) {
  return delta_cap * raw.array().tanh();
}

Matrix batch_score_matrix(const PreferenceDataset& data, std::span<const std::size_t> batch,
                          const GeometryBundle& bundle, const StateActionSpace& space) {
  Matrix out(bundle.scores.rows(), 2 * static_cast<Eigen::Index>(batch.size()));
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto& c = data.samples.at(batch[j]);
    out.col(2 * static_cast<Eigen::Index>(j)) =
        bundle.scores.col(static_cast<Eigen::Index>(space.index(c.prompt, c.chosen)));
    out.col(2 * static_cast<Eigen::Index>(j) + 1) =
        bundle.scores.col(static_cast<Eigen::Index>(space.index(c.prompt, c.rejected)));
  }
  return out;
}

LossValue batchwise_auxdpo_loss(const ParametricPolicy& policy, const Vector& theta,
                                const Vector& raw, const PreferenceDataset& data,
                                std::span<const std::size_t> batch, double beta,
                                const BatchwiseKnobs& knobs, const GeometryBundle& bundle) {
  check_beta(beta);
  if (batch.empty()) throw InvalidArgument("batchwise AuxDPO needs a nonempty batch");
  if (knobs.lambda_null < 0.0 || knobs.lambda_amp < 0.0 || !(knobs.delta_cap > 0.0)) {
    throw InvalidArgument("batchwise AuxDPO knobs must be nonnegative with delta_cap > 0");
  }
  const auto n = static_cast<Eigen::Index>(data.size());
  require_size(raw, 2 * n, "batchwise AuxDPO offsets");
  require_finite(raw, "batchwise AuxDPO offsets");
  if (bundle.size() != policy.size()) throw InvalidArgument("geometry bundle does not match policy");
  const auto& space = policy.space();
  const auto st = policy_state(policy, theta, beta);

  const auto b = static_cast<Eigen::Index>(batch.size());
  Vector delta_b(2 * b);
  Vector tanh_b(2 * b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const auto i = static_cast<Eigen::Index>(batch[static_cast<std::size_t>(j)]);
    if (i >= n) throw InvalidArgument("batch index outside the dataset");
    tanh_b(2 * j) = std::tanh(raw(2 * i));
    tanh_b(2 * j + 1) = std::tanh(raw(2 * i + 1));
  }
  delta_b = knobs.delta_cap * tanh_b;
  const Matrix scores_b = batch_score_matrix(data, batch, bundle, space);

  LossValue out;
  Vector d_reward = Vector::Zero(st.reward.size());
  Vector d_delta_b = Vector::Zero(2 * b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const auto& c = data.samples[batch[static_cast<std::size_t>(j)]];
    const auto w = static_cast<Eigen::Index>(space.index(c.prompt, c.chosen));
    const auto l = static_cast<Eigen::Index>(space.index(c.prompt, c.rejected));
    const double m = st.reward(w) - st.reward(l) + beta * (delta_b(2 * j) - delta_b(2 * j + 1));
    out.value -= c.weight * clamped_log_sigmoid(m, out.clamped);
    const double dm = c.weight * (sigmoid(m) - 1.0);
    d_reward(w) += dm;
    d_reward(l) -= dm;
    d_delta_b(2 * j) += beta * dm;
    d_delta_b(2 * j + 1) -= beta * dm;
  }
  const Vector residual = scores_b * delta_b;
  out.value += knobs.lambda_null * residual.squaredNorm() - knobs.lambda_amp * delta_b.squaredNorm();
  d_delta_b += 2.0 * knobs.lambda_null * (scores_b.transpose() * residual) -
               2.0 * knobs.lambda_amp * delta_b;
  if (!std::isfinite(out.value)) throw NumericalError("batchwise AuxDPO loss is not finite");

  out.grad = beta * (policy.score_matrix(theta) * d_reward);
  out.aux_grad = Vector::Zero(2 * n);
  for (Eigen::Index j = 0; j < b; ++j) {
    const auto i = static_cast<Eigen::Index>(batch[static_cast<std::size_t>(j)]);
    for (Eigen::Index k = 0; k < 2; ++k) {
      const double chain = knobs.delta_cap * (1.0 - tanh_b(2 * j + k) * tanh_b(2 * j + k));
      out.aux_grad(2 * i + k) += d_delta_b(2 * j + k) * chain;
    }
  }
  return out;
}

LossValue population_loss(const LossSpec& loss, const ParametricPolicy& policy, const Vector& theta,
                          const PreferenceSpec& spec) {
  loss.validate();
  switch (loss.kind) {
    case LossKind::dpo: return dpo_population_loss(policy, theta, spec, loss.beta);
    case LossKind::ipo: return ipo_population_loss(policy, theta, spec, loss.beta, loss.ipo_tau());
    case LossKind::dpop: return dpop_population_loss(policy, theta, spec, loss.beta, loss.lambda_pos);
    case LossKind::auxdpo: break;
  }
  throw InvalidArgument("AuxDPO needs offsets; use auxdpo_population_loss");
}

LossValue empirical_loss(const LossSpec& loss, const ParametricPolicy& policy, const Vector& theta,
                         const PreferenceDataset& data) {
  loss.validate();
  switch (loss.kind) {
    case LossKind::dpo: return dpo_empirical_loss(policy, theta, data, loss.beta);
    case LossKind::ipo: return ipo_empirical_loss(policy, theta, data, loss.beta, loss.ipo_tau());
    case LossKind::dpop: return dpop_empirical_loss(policy, theta, data, loss.beta, loss.lambda_pos);
    case LossKind::auxdpo: break;
  }
  throw InvalidArgument("AuxDPO needs offsets; use auxdpo_empirical_loss");
}

double entropy_floor(const PreferenceSpec& spec) {
  double total = 0.0;
  for (const auto& t : population_terms(spec)) total += t.weight * bernoulli_entropy(t.target);
  return total;
}

double weighted_reverse_kl(const PreferenceSpec& spec, const RewardVector& r) {
  require_size(r.values(), static_cast<Eigen::Index>(spec.space().size()), "reward vector");
  double total = 0.0;
  for (const auto& t : population_terms(spec)) {
    // log q and log(1 - q) straight from the margin; 1 - sigmoid(z) loses digits.
    const double z = r.values()(t.first) - r.values()(t.second);
    double kl = 0.0;
    if (t.target > 0.0) kl += t.target * (std::log(t.target) - log_sigmoid(z));
    if (t.target < 1.0) kl += (1.0 - t.target) * (std::log1p(-t.target) - log_sigmoid(-z));
    total += t.weight * kl;
  }
  return total;
}

}  // namespace auxdpo
