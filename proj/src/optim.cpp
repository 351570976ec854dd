// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The auxdpo Authors

#include "auxdpo/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "auxdpo/geometry.hpp"
#include "auxdpo/rng.hpp"

namespace auxdpo {

std::string_view to_string(SearchMethod method) {
  return method == SearchMethod::grid ? "grid" : "gd";
}

SearchMethod parse_search_method(std::string_view text) {
  if (text == "grid") return SearchMethod::grid;
  if (text == "gd") return SearchMethod::gd;
  throw InvalidArgument("unknown optimizer method '" + std::string(text) + "'");
}

void OptimConfig::validate() const {
  if (!(grid_step > 0.0)) throw InvalidArgument("grid_step must be positive");
  if (!(grid_lo < grid_hi)) throw InvalidArgument("grid range must satisfy lo < hi");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
  if (!(aux_learning_rate > 0.0)) throw InvalidArgument("aux_learning_rate must be positive");
  if (max_iters == 0) throw InvalidArgument("max_iters must be positive");
  if (!(grad_tol >= 0.0)) throw InvalidArgument("grad_tol must be nonnegative");
}

namespace {

constexpr double kArmijo = 1e-4;
constexpr double kEps = std::numeric_limits<double>::epsilon();
constexpr double kRunaway = 1e100;

double safe_eval(const Objective& f, const Vector& x, Vector& g) {
  try {
    const double v = f(x, g);
    if (!std::isfinite(v) || !g.allFinite()) return std::numeric_limits<double>::infinity();
    return v;
  } catch (const NumericalError&) {
    return std::numeric_limits<double>::infinity();
  } catch (const NonFiniteInput&) {
    return std::numeric_limits<double>::infinity();
  }
}

OptimReport run_grid(const Objective& f, const Vector& init, const OptimConfig& config) {
  if (init.size() != 1) throw InvalidArgument("grid search needs a one-dimensional parameter");
  const auto points =
      static_cast<long>(std::floor((config.grid_hi - config.grid_lo) / config.grid_step + 0.5)) + 1;
  OptimReport rep;
  double best = std::numeric_limits<double>::infinity();
  long best_i = -1;
  Vector x(1), g(1);
  for (long i = 0; i < points; ++i) {
    x(0) = config.grid_lo + static_cast<double>(i) * config.grid_step;
    const double v = safe_eval(f, x, g);
    if (v < best) {
      best = v;
      best_i = i;
      rep.trajectory.push_back({static_cast<std::size_t>(i), v, g.norm()});
    }
  }
  if (best_i < 0) throw DivergenceError("objective is not finite anywhere on the grid", {});
  rep.params = Vector::Constant(1, config.grid_lo + static_cast<double>(best_i) * config.grid_step);
  rep.final_loss = best;
  rep.iterations = static_cast<std::size_t>(points);
  rep.converged = true;
  rep.boundary_hit = best_i == 0 || best_i == points - 1;
  return rep;
}

OptimReport run_gd(const Objective& f, Vector x, const OptimConfig& config, const Vector& scales) {
  OptimReport rep;
  Vector g(x.size());
  double fx = safe_eval(f, x, g);
  if (!std::isfinite(fx)) throw NumericalError("objective is not finite at the initial point");

  double t = 1.0;
  Vector xp, gp;
  Vector xn(x.size()), gn(x.size());
  const Eigen::ArrayXd inv_scales = scales.array().inverse();
  std::size_t it = 0;
  for (;; ++it) {
    const double gnorm = g.norm();
    rep.trajectory.push_back({it, fx, gnorm});
    if (gnorm <= config.grad_tol) {
      rep.converged = true;
      break;
    }
    if (it >= config.max_iters) break;
    if (xp.size() > 0) {
      const Vector s = x - xp;
      const double sy = s.dot(g - gp);
      if (sy > 0.0) {
        t = std::clamp((s.array().square() * inv_scales).sum() / sy, 1e-12, 1e12);
      } else {
        t = std::min(2.0 * t, 1e12);
      }
    }
    const Vector dir = -(scales.array() * g.array()).matrix();
    const double slope = g.dot(dir);
    const double t0 = t;
    bool accepted = false;
    double fn = 0.0;
    for (int bt = 0; bt < 80; ++bt) {
      const double bound = fx + kArmijo * t * slope;
      if (bound == fx) break;  // predicted decrease is below the resolution of f
      xn = x + t * dir;
      fn = safe_eval(f, xn, gn);
      if (fn <= bound) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      // Decrease is below rounding: accept a step that shrinks the gradient
      // without raising the loss beyond a few ulps.
      t = t0;
      const double slack = 8.0 * kEps * std::max(1.0, std::abs(fx));
      for (int bt = 0; bt < 40; ++bt) {
        xn = x + t * dir;
        fn = safe_eval(f, xn, gn);
        if (xn != x && fn <= fx + slack && gn.norm() < gnorm) {
          accepted = true;
          rep.precision_limited = true;
          break;
        }
        t *= 0.5;
      }
    }
    if (!accepted) {
      rep.precision_limited = true;
      break;
    }
    xp = x;
    gp = g;
    x = xn;
    g = gn;
    fx = fn;
    if (!(x.norm() < kRunaway)) {
      rep.trajectory.push_back({it + 1, fx, g.norm()});
      throw DivergenceError("iterates diverged", rep.trajectory);
    }
  }
  rep.params = x;
  rep.final_loss = fx;
  rep.iterations = it;
  return rep;
}

}  // namespace

OptimReport minimize(const Objective& objective, const Vector& init, const OptimConfig& config,
                     const Vector& scales) {
  config.validate();
  require_finite(init, "initial point");
  if (config.method == SearchMethod::grid) return run_grid(objective, init, config);

  Vector step_scales = scales;
  if (step_scales.size() == 0) step_scales = Vector::Constant(init.size(), config.learning_rate);
  require_size(step_scales, init.size(), "step scales");
  if ((step_scales.array() <= 0.0).any()) throw InvalidArgument("step scales must be positive");

  const std::size_t restarts = std::max<std::size_t>(config.restarts, 1);
  OptimReport best;
  bool have = false;
  std::vector<TrajectoryPoint> last_trajectory;
  std::string last_error;
  for (std::size_t r = 0; r < restarts; ++r) {
    Vector x0 = init;
    if (r > 0) {
      CounterRng rng(config.seed, 0x5EED + r);
      x0 += rng.normal_vector(init.size(), config.restart_scale);
    }
    try {
      OptimReport rep = run_gd(objective, x0, config, step_scales);
      if (!have || rep.final_loss < best.final_loss) {
        best = std::move(rep);
        have = true;
      }
    } catch (const DivergenceError& e) {
      if (restarts == 1) throw;
      last_error = e.what();
      last_trajectory = e.trajectory();
    } catch (const NumericalError& e) {
      if (restarts == 1) throw;
      last_error = e.what();
    }
  }
  if (!have) throw DivergenceError("all restarts diverged: " + last_error, last_trajectory);
  return best;
}

void describe(OptimReport& report, const ParametricPolicy& policy, const RewardVector& r_star) {
  report.final_policy = policy.probs(report.params);
  const auto cert = failure_mode_certificate(policy, report.params, r_star);
  report.expected_reward = cert.reward;
  report.preference_reversal = cert.preference_reversal;
  report.reward_reduction = cert.reward_reduction;
}

namespace {

using OffsetEval = std::function<LossValue(const Vector& theta, const Vector& delta)>;

OptimReport nullspace_descent(const ParametricPolicy& policy, const RewardVector& latent,
                              const GeometryBundle& bundle, const OffsetEval& eval,
                              const OptimConfig& config) {
  const auto basis = nullspace_basis(bundle);
  const auto d = static_cast<Eigen::Index>(policy.dim());
  const auto k = static_cast<Eigen::Index>(basis.k);
  const Matrix& gamma = basis.gamma;
  bool clamped = false;

  auto joint = [&](const Vector& x, Vector& g) {
    const LossValue lv = eval(x.head(d), gamma * x.tail(k));
    clamped = clamped || lv.clamped;
    g.resize(d + k);
    g.head(d) = lv.grad;
    g.tail(k) = gamma.transpose() * lv.aux_grad;
    return lv.value;
  };

  OptimReport rep;
  if (!config.alternating) {
    OptimConfig gd = config;
    gd.method = SearchMethod::gd;
    Vector init(d + k);
    init << policy.theta0(), Vector::Zero(k);
    // r^beta is beta times the log-ratio, so the theta block carries beta^2
    // more curvature than the offsets.
    Vector scales(d + k);
    scales << Vector::Constant(d, config.learning_rate / (bundle.beta * bundle.beta)),
        Vector::Constant(k, config.learning_rate);
    rep = minimize(joint, init, gd, scales);
  } else {
    Vector theta = policy.theta0();
    Vector c = Vector::Zero(k);
    OptimConfig theta_cfg = config;
    theta_cfg.method = d == 1 ? SearchMethod::grid : SearchMethod::gd;
    theta_cfg.restarts = 1;
    OptimConfig c_cfg = config;
    c_cfg.method = SearchMethod::gd;
    c_cfg.restarts = 1;
    const double theta_tol = d == 1 ? 0.5 * config.grid_step : 1e-10;
    double value = 0.0;
    for (std::size_t outer = 0; outer < 500; ++outer) {
      const Vector delta = gamma * c;
      auto theta_obj = [&](const Vector& th, Vector& g) {
        const LossValue lv = eval(th, delta);
        g = lv.grad;
        return lv.value;
      };
      const Vector new_theta = minimize(theta_obj, theta, theta_cfg).params;
      auto c_obj = [&](const Vector& cc, Vector& g) {
        const LossValue lv = eval(new_theta, gamma * cc);
        g = gamma.transpose() * lv.aux_grad;
        return lv.value;
      };
      const Vector new_c = k > 0 ? minimize(c_obj, c, c_cfg).params : c;
      const double moved_theta = (new_theta - theta).lpNorm<Eigen::Infinity>();
      const double moved_c = k > 0 ? (new_c - c).lpNorm<Eigen::Infinity>() : 0.0;
      theta = new_theta;
      c = new_c;
      Vector x(d + k), g;
      x << theta, c;
      value = joint(x, g);
      rep.trajectory.push_back({outer, value, g.norm()});
      rep.iterations = outer + 1;
      if (moved_theta <= theta_tol && moved_c <= 1e-9) {
        rep.converged = true;
        break;
      }
    }
    rep.params.resize(d + k);
    rep.params << theta, c;
    rep.final_loss = value;
  }
  const Vector x = rep.params;
  rep.params = x.head(d);
  rep.aux = x.tail(k);
  rep.delta = gamma * rep.aux;
  rep.clamped = clamped;
  rep.constraint_residual = (bundle.weighted_scores * rep.delta).lpNorm<Eigen::Infinity>();
  describe(rep, policy, latent);
  return rep;
}

}  // namespace

OptimReport minimize_auxdpo_nullspace(const ParametricPolicy& policy, const PreferenceSpec& spec,
                                      double beta, const OptimConfig& config) {
  if (spec.space() != policy.space()) throw InvalidArgument("spec and policy spaces differ");
  const auto bundle = geometry_bundle(policy, beta);
  return nullspace_descent(
      policy, spec.latent(), bundle,
      [&](const Vector& theta, const Vector& delta) {
        return auxdpo_population_loss(policy, theta, delta, spec, beta);
      },
      config);
}

OptimReport minimize_auxdpo_nullspace(const ParametricPolicy& policy,
                                      const PreferenceDataset& data, double beta,
                                      const OptimConfig& config) {
  const auto bundle = geometry_bundle(policy, beta);
  return nullspace_descent(
      policy, RewardVector::zeros(policy.size()), bundle,
      [&](const Vector& theta, const Vector& delta) {
        return auxdpo_tied_loss(policy, theta, delta, data, beta, 0.0, bundle);
      },
      config);
}

OptimReport minimize_auxdpo_penalized(const ParametricPolicy& policy,
                                      const PreferenceDataset& data, double beta, double lambda,
                                      const OptimConfig& config, OffsetMode mode) {
  if (lambda < 0.0) throw InvalidArgument("lambda must be nonnegative");
  config.validate();
  const auto bundle = geometry_bundle(policy, beta);
  const auto d = static_cast<Eigen::Index>(policy.dim());
  const auto k = mode == OffsetMode::tied ? static_cast<Eigen::Index>(policy.size())
                                          : 2 * static_cast<Eigen::Index>(data.size());
  bool clamped = false;
  auto joint = [&](const Vector& x, Vector& g) {
    const LossValue lv =
        mode == OffsetMode::tied
            ? auxdpo_tied_loss(policy, x.head(d), x.tail(k), data, beta, lambda, bundle)
            : auxdpo_empirical_loss(policy, x.head(d), x.tail(k), data, beta, lambda, bundle);
    clamped = clamped || lv.clamped;
    g.resize(d + k);
    g.head(d) = lv.grad;
    g.tail(k) = lv.aux_grad;
    return lv.value;
  };
  Vector init(d + k);
  init << policy.theta0(), Vector::Zero(k);
  Vector scales(d + k);
  scales << Vector::Constant(d, config.learning_rate), Vector::Constant(k, config.aux_learning_rate);
  OptimConfig gd = config;
  gd.method = SearchMethod::gd;
  OptimReport rep = minimize(joint, init, gd, scales);
  const Vector x = rep.params;
  rep.params = x.head(d);
  rep.aux = x.tail(k);
  rep.delta = rep.aux;
  rep.clamped = clamped;
  if (mode == OffsetMode::tied) {
    rep.constraint_residual = (bundle.weighted_scores * rep.delta).lpNorm<Eigen::Infinity>();
  } else {
    const auto& space = policy.space();
    Vector moment = Vector::Zero(static_cast<Eigen::Index>(policy.dim()));
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& c = data.samples[i];
      const auto ii = static_cast<Eigen::Index>(i);
      moment += c.weight * (rep.delta(2 * ii) * bundle.scores.col(static_cast<Eigen::Index>(
                                                    space.index(c.prompt, c.chosen))) +
                            rep.delta(2 * ii + 1) * bundle.scores.col(static_cast<Eigen::Index>(
                                                        space.index(c.prompt, c.rejected))));
      total += c.weight;
    }
    rep.constraint_residual = (moment / (2.0 * total)).lpNorm<Eigen::Infinity>();
  }
  rep.constraint_violated = rep.constraint_residual > 1e-6;
  describe(rep, policy, RewardVector::zeros(policy.size()));
  return rep;
}

OptimReport minimize_population(const LossSpec& loss, const ParametricPolicy& policy,
                                const PreferenceSpec& spec, const OptimConfig& config) {
  loss.validate();
  if (spec.space() != policy.space()) throw InvalidArgument("spec and policy spaces differ");
  if (loss.kind == LossKind::auxdpo) {
    return minimize_auxdpo_nullspace(policy, spec, loss.beta, config);
  }
  bool clamped = false;
  auto objective = [&](const Vector& theta, Vector& g) {
    const LossValue lv = population_loss(loss, policy, theta, spec);
    clamped = clamped || lv.clamped;
    g = lv.grad;
    return lv.value;
  };
  OptimReport rep = minimize(objective, policy.theta0(), config);
  rep.clamped = clamped;
  describe(rep, policy, spec.latent());
  return rep;
}

OptimReport minimize_empirical(const LossSpec& loss, const ParametricPolicy& policy,
                               const PreferenceDataset& data, const OptimConfig& config) {
  loss.validate();
  if (loss.kind == LossKind::auxdpo) {
    if (loss.lambda_penalty > 0.0) {
      return minimize_auxdpo_penalized(policy, data, loss.beta, loss.lambda_penalty, config);
    }
    return minimize_auxdpo_nullspace(policy, data, loss.beta, config);
  }
  bool clamped = false;
  auto objective = [&](const Vector& theta, Vector& g) {
    const LossValue lv = empirical_loss(loss, policy, theta, data);
    clamped = clamped || lv.clamped;
    g = lv.grad;
    return lv.value;
  };
  OptimReport rep = minimize(objective, policy.theta0(), config);
  rep.clamped = clamped;
  describe(rep, policy, RewardVector::zeros(policy.size()));
  return rep;
}

namespace {

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng(seed, 0xB47C0000ULL + epoch);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.next_bits() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

OptimReport batch_training(const ParametricPolicy& policy, const PreferenceDataset& data,
                           double beta, const BatchwiseConfig& config, bool with_offsets) {
  if (data.empty()) throw InvalidArgument("batchwise training needs data");
  if (config.batch_size == 0 || config.epochs == 0) {
    throw InvalidArgument("batch_size and epochs must be positive");
  }
  if (!(config.learning_rate > 0.0) || !(config.aux_learning_rate > 0.0)) {
    throw InvalidArgument("learning rates must be positive");
  }
  const auto bundle = geometry_bundle(policy, beta);
  const std::size_t n = data.size();
  const BatchwiseKnobs knobs = with_offsets ? config.knobs : BatchwiseKnobs{0.0, 0.0, 1.0};
  Vector theta = policy.theta0();
  Vector raw = Vector::Zero(2 * static_cast<Eigen::Index>(n));
  OptimReport rep;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = shuffled(n, config.seed, epoch);
    double epoch_loss = 0.0;
    double ratio_sum = 0.0;
    std::size_t ratio_count = 0;
    double grad_norm = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, stop - start);
      const LossValue lv = batchwise_auxdpo_loss(policy, theta, raw, data, batch, beta, knobs, bundle);
      if (!std::isfinite(lv.value)) throw NumericalError("batchwise loss is not finite");
      rep.clamped = rep.clamped || lv.clamped;
      epoch_loss += lv.value;
      grad_norm = lv.grad.norm();
      theta -= config.learning_rate / static_cast<double>(batch.size()) * lv.grad;
      if (!with_offsets) continue;
      raw -= config.aux_learning_rate * lv.aux_grad;
      Vector delta_b(2 * static_cast<Eigen::Index>(batch.size()));
      for (std::size_t j = 0; j < batch.size(); ++j) {
        const auto i = static_cast<Eigen::Index>(batch[j]);
        const auto jj = static_cast<Eigen::Index>(j);
        delta_b(2 * jj) = knobs.delta_cap * std::tanh(raw(2 * i));
        delta_b(2 * jj + 1) = knobs.delta_cap * std::tanh(raw(2 * i + 1));
      }
      const double norm = delta_b.norm();
      if (norm > 0.0) {
        ratio_sum += (batch_score_matrix(data, batch, bundle, policy.space()) * delta_b).norm() / norm;
        ++ratio_count;
      }
    }
    if (!theta.allFinite() || !raw.allFinite()) {
      throw DivergenceError("batchwise training diverged", rep.trajectory);
    }
    rep.trajectory.push_back({epoch, epoch_loss / static_cast<double>(n), grad_norm});
    if (with_offsets) {
      rep.null_ratio.push_back(ratio_count > 0 ? ratio_sum / static_cast<double>(ratio_count) : 0.0);
    }
  }
  rep.params = theta;
  rep.aux = raw;
  if (with_offsets) rep.delta = capped_delta(raw, knobs.delta_cap);
  rep.final_loss = rep.trajectory.back().loss;
  rep.iterations = config.epochs;
  rep.converged = true;
  rep.constraint_residual = rep.null_ratio.empty() ? 0.0 : rep.null_ratio.back();
  describe(rep, policy, RewardVector::zeros(policy.size()));
  return rep;
}

}  // namespace

OptimReport train_batchwise_auxdpo(const ParametricPolicy& policy, const PreferenceDataset& data,
                                   double beta, const BatchwiseConfig& config) {
  return batch_training(policy, data, beta, config, true);
}

OptimReport train_batchwise_dpo(const ParametricPolicy& policy, const PreferenceDataset& data,
                                double beta, const BatchwiseConfig& config) {
  return batch_training(policy, data, beta, config, false);
}

double preference_accuracy(const ParametricPolicy& policy, const Vector& theta,
                           const PreferenceDataset& data) {
  if (data.empty()) throw InvalidArgument("accuracy needs data");
  const Vector r = policy.log_probs(theta) - policy.log_probs(policy.theta0());
  const auto& space = policy.space();
  double hits = 0.0;
  double total = 0.0;
  for (const auto& c : data.samples) {
    const double gap = r(static_cast<Eigen::Index>(space.index(c.prompt, c.chosen))) -
                       r(static_cast<Eigen::Index>(space.index(c.prompt, c.rejected)));
    hits += c.weight * (gap > 0.0 ? 1.0 : gap == 0.0 ? 0.5 : 0.0);
    total += c.weight;
  }
  return hits / total;
}

namespace {

std::string join(const Vector& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i > 0) out += ' ';
    out += fmt::format("{:.17g}", v(i));
  }
  return out;
}

}  // namespace

void write_report(std::ostream& out, const OptimReport& report) {
  fmt::print(out, "params = {}\n", join(report.params));
  if (report.aux.size() > 0) fmt::print(out, "aux = {}\n", join(report.aux));
  if (report.delta.size() > 0) fmt::print(out, "delta = {}\n", join(report.delta));
  fmt::print(out, "final_loss = {:.17g}\n", report.final_loss);
  fmt::print(out, "iterations = {}\n", report.iterations);
  fmt::print(out, "converged = {}\n", report.converged);
  fmt::print(out, "boundary_hit = {}\n", report.boundary_hit);
  fmt::print(out, "precision_limited = {}\n", report.precision_limited);
  fmt::print(out, "clamped = {}\n", report.clamped);
  fmt::print(out, "final_policy = {}\n", join(report.final_policy));
  fmt::print(out, "expected_reward = {:.17g}\n", report.expected_reward);
  fmt::print(out, "preference_reversal = {}\n", report.preference_reversal);
  fmt::print(out, "reward_reduction = {}\n", report.reward_reduction);
  fmt::print(out, "constraint_residual = {:.17g}\n", report.constraint_residual);
  fmt::print(out, "constraint_violated = {}\n", report.constraint_violated);
  if (!report.null_ratio.empty()) {
    fmt::print(out, "null_ratio = {}\n",
               join(Eigen::Map<const Vector>(report.null_ratio.data(),
                                             static_cast<Eigen::Index>(report.null_ratio.size()))));
  }
  fmt::print(out, "\niteration,loss,grad_norm\n");
  for (const auto& p : report.trajectory) {
    fmt::print(out, "{},{:.17g},{:.17g}\n", p.iteration, p.loss, p.grad_norm);
  }
}

}  // namespace auxdpo
