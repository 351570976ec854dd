// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The auxdpo Authors

#include "auxdpo/experiments.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "auxdpo/geometry.hpp"
#include "auxdpo/rng.hpp"

namespace auxdpo {

bool ResultTable::ok() const {
  for (const auto& row : rows) {
    if (!row.error.empty() || !row.converged || row.boundary_hit) return false;
  }
  return !rows.empty();
}

ToyVariant parse_toy_variant(std::string_view text) {
  if (text == "imbalanced") return ToyVariant::imbalanced;
  if (text == "balanced") return ToyVariant::balanced;
  throw InvalidArgument("unknown toy variant '" + std::string(text) + "'");
}

std::string_view to_string(ToyVariant variant) {
  return variant == ToyVariant::imbalanced ? "imbalanced" : "balanced";
}

PreferenceSpec toy_spec(double n12, double n23, double n31, double n13) {
  Vector r(3);
  r << 1.0, 2.0, 0.0;
  PreferenceSpec spec(StateActionSpace::promptless(3), RewardVector(r));
  spec.set_count(0, 0, 1, n12);
  spec.set_count(0, 1, 2, n23);
  spec.set_count(0, 2, 0, n31 + n13);
  return spec;
}

PreferenceSpec toy_spec(ToyVariant variant) {
  return variant == ToyVariant::imbalanced ? toy_spec(5, 5, 50) : toy_spec(10, 10, 0, 10);
}

std::vector<LossKind> toy_methods(ToyVariant variant) {
  if (variant == ToyVariant::imbalanced) {
    return {LossKind::dpo, LossKind::ipo, LossKind::dpop, LossKind::auxdpo};
  }
  return {LossKind::dpo, LossKind::ipo, LossKind::auxdpo};
}

namespace {

std::string method_label(LossKind kind) {
  switch (kind) {
    case LossKind::dpo: return "DPO";
    case LossKind::ipo: return "IPO";
    case LossKind::dpop: return "DPOP";
    case LossKind::auxdpo: return "AuxDPO";
  }
  return "?";
}

ResultRow row_from(LossKind kind, const OptimReport& rep) {
  ResultRow row;
  row.method = method_label(kind);
  row.theta = rep.params;
  row.policy = rep.final_policy;
  row.reward = rep.expected_reward;
  row.converged = rep.converged;
  row.boundary_hit = rep.boundary_hit;
  row.preference_reversal = rep.preference_reversal;
  row.reward_reduction = rep.reward_reduction;
  return row;
}

OptimConfig toy_config(LossKind kind) {
  OptimConfig config;
  config.method = kind == LossKind::auxdpo ? SearchMethod::gd : SearchMethod::grid;
  return config;
}

std::string table_text(const PreferenceSpec& spec) {
  std::ostringstream out;
  write_preference_table(out, spec);
  write_reward_table(out, spec.latent(), spec.space());
  return out.str();
}

}  // namespace

ResultTable run_toy(ToyVariant variant, const std::vector<LossKind>& methods) {
  const auto chosen = methods.empty() ? toy_methods(variant) : methods;
  const auto spec = toy_spec(variant);
  const auto policy = ParametricPolicy::toy();
  ResultTable table;
  table.title = fmt::format("toy {}", to_string(variant));
  std::string hashed = table_text(spec);
  for (auto kind : chosen) hashed += std::string(to_string(kind)) + '\n';
  table.spec_hash = fnv1a_hex(hashed);
  for (auto kind : chosen) {
    LossSpec loss;
    loss.kind = kind;
    try {
      table.rows.push_back(row_from(kind, minimize_population(loss, policy, spec, toy_config(kind))));
    } catch (const std::exception& e) {
      ResultRow row;
      row.method = method_label(kind);
      row.error = e.what();
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

namespace {

struct Target {
  const char* method;
  double theta;
  double theta_tol;
  double reward;
  double reward_tol;
};

CheckLine check_value(const std::string& name, double got, double want, double tol) {
  return {name, std::abs(got - want) <= tol,
          fmt::format("{:.4f} (target {} +- {})", got, want, tol)};
}

}  // namespace

std::vector<CheckLine> check_toy(const ResultTable& table, ToyVariant variant) {
  static const Target imbalanced[] = {{"DPO", 0.40, 0.02, 0.895, 0.01},
                                      {"IPO", 0.10, 0.05, 0.969, 0.02},
                                      {"DPOP", 0.10, 0.05, 0.969, 0.02},
                                      {"AuxDPO", -0.50, 0.02, 1.199, 0.01}};
  static const Target balanced[] = {{"DPO", -0.43, 0.02, 1.17, 0.01},
                                    {"IPO", -0.10, 0.05, 1.03, 0.02},
                                    {"AuxDPO", -0.50, 0.02, 1.20, 0.01}};
  std::vector<CheckLine> out;
  const auto* targets = variant == ToyVariant::imbalanced ? imbalanced : balanced;
  const std::size_t count = variant == ToyVariant::imbalanced ? 4 : 3;
  for (const auto& row : table.rows) {
    if (!row.error.empty()) {
      out.push_back({row.method, false, row.error});
      continue;
    }
    for (std::size_t i = 0; i < count; ++i) {
      const auto& t = targets[i];
      if (row.method != t.method) continue;
      out.push_back(check_value(row.method + " theta", row.theta(0), t.theta, t.theta_tol));
      out.push_back(check_value(row.method + " reward", row.reward, t.reward, t.reward_tol));
    }
    if (variant == ToyVariant::imbalanced && row.method == "DPO") {
      out.push_back({"DPO pathologies", row.preference_reversal && row.reward_reduction,
                     fmt::format("reversal={} reduction={}", row.preference_reversal,
                                 row.reward_reduction)});
    }
    if (row.method == "AuxDPO") {
      out.push_back({"AuxDPO pathologies",
                     !row.preference_reversal && !row.reward_reduction && row.reward > 1.0,
                     fmt::format("reversal={} reduction={} reward={:.4f}", row.preference_reversal,
                                 row.reward_reduction, row.reward)});
    }
  }
  return out;
}

std::vector<CountPoint> read_count_grid(std::istream& in) {
  std::vector<CountPoint> out;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto values = parse_number_list(line);
    if (values.empty()) continue;
    if (values.size() != 3) throw InvalidArgument("count grid lines are `n12 n23 n31`");
    for (double v : values) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("counts must be nonnegative");
    }
    out.push_back({values[0], values[1], values[2]});
  }
  return out;
}

std::vector<CountSweepRow> run_count_sweep(const std::vector<CountPoint>& grid,
                                           const std::vector<LossKind>& methods, double beta) {
  const auto policy = ParametricPolicy::toy();
  std::vector<CountSweepRow> out;
  for (const auto& point : grid) {
    const auto spec = toy_spec(point.n12, point.n23, point.n31);
    for (auto kind : methods) {
      LossSpec loss;
      loss.kind = kind;
      loss.beta = beta;
      const auto rep = minimize_population(loss, policy, spec, toy_config(kind));
      out.push_back({point, std::string(to_string(kind)), rep.params(0), rep.expected_reward,
                     rep.preference_reversal, rep.reward_reduction,
                     rep.converged && !rep.boundary_hit});
    }
  }
  return out;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("slope fit needs >= 2 points");
  double mx = 0.0, my = 0.0;
  const auto n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw InvalidArgument("slope fit needs positive values");
    mx += std::log(x[i]) / n;
    my += std::log(y[i]) / n;
  }
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

BetaSweep run_beta_sweep(const std::vector<double>& betas, double offset, std::uint64_t seed) {
  for (double b : betas) {
    if (!(b > 0.0) || !std::isfinite(b)) throw InvalidArgument("beta values must be positive");
  }
  struct Instance {
    std::string name;
    ParametricPolicy policy;
    Vector direction;
    RewardVector r_star;
  };
  std::vector<Instance> instances;
  {
    Vector r(3);
    r << 1.0, 2.0, 0.0;
    instances.push_back({"toy", ParametricPolicy::toy(), Vector::Ones(1), RewardVector(r)});
  }
  {
    CounterRng rng(seed, 0xBE7A);
    const auto space = StateActionSpace::uniform(2, 3);
    const auto m = static_cast<Eigen::Index>(space.size());
    auto policy = ParametricPolicy::tabular(space, rng.normal_vector(m));
    Vector u = rng.normal_vector(m);
    u.normalize();
    instances.push_back({"tabular", std::move(policy), u, RewardVector(rng.normal_vector(m))});
  }

  BetaSweep out;
  for (const auto& inst : instances) {
    std::vector<double> lin, obj;
    for (double beta : betas) {
      const Vector theta = inst.policy.theta0() + (offset / beta) * inst.direction;
      lin.push_back(linearization_error(inst.policy, theta, beta).lpNorm<Eigen::Infinity>());
      obj.push_back(objective_quadratic_error(inst.policy, theta, beta, inst.r_star));
      out.rows.push_back({beta, inst.name + "_linearization", lin.back(), -1.0});
      out.rows.push_back({beta, inst.name + "_objective", obj.back(), -2.0});
    }
    if (betas.size() >= 2 && offset != 0.0) {
      out.fits.push_back({inst.name + "_linearization", loglog_slope(betas, lin), -1.0});
      out.fits.push_back({inst.name + "_objective", loglog_slope(betas, obj), -2.0});
    }
  }
  return out;
}

ResultTable run_experiment(const ExperimentSpec& spec, std::vector<OptimReport>* reports) {
  spec.validate();
  ResultTable table;
  table.title = spec.name;
  table.seed = spec.seed;
  table.spec_hash = fnv1a_hex(spec.canonical);

  std::optional<PreferenceDataset> data;
  if (spec.dataset_file) {
    std::ifstream in(*spec.dataset_file);
    data = read_dataset_csv(in, spec.policy.space());
  } else if (spec.sampled) {
    data = sample_dataset(spec.preferences, spec.seed);
  }

  for (auto kind : spec.methods) {
    LossSpec loss = spec.loss;
    loss.kind = kind;
    try {
      OptimReport rep = data ? minimize_empirical(loss, spec.policy, *data, spec.optim)
                             : minimize_population(loss, spec.policy, spec.preferences, spec.optim);
      describe(rep, spec.policy, spec.preferences.latent());
      table.rows.push_back(row_from(kind, rep));
      if (reports != nullptr) reports->push_back(std::move(rep));
    } catch (const std::exception& e) {
      ResultRow row;
      row.method = method_label(kind);
      row.error = e.what();
      table.rows.push_back(std::move(row));
      if (reports != nullptr) reports->emplace_back();
    }
  }
  return table;
}

namespace {

std::string join(const Vector& v, int digits) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i > 0) out += ' ';
    out += fmt::format("{:.{}g}", v(i), digits);
  }
  return out;
}

}  // namespace

void write_diagnostics(std::ostream& out, const ExperimentSpec& spec) {
  const auto& policy = spec.policy;
  const double beta = spec.loss.beta;
  const auto bundle = geometry_bundle(policy, beta);
  const auto basis = nullspace_basis(bundle);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(bundle.fisher);
  const auto optimum = rlhf_local_optimum(spec.preferences.latent(), bundle);
  const auto rep = min_norm_representative(optimum.theta, bundle);
  const auto cert = failure_mode_certificate(policy, optimum.theta, spec.preferences.latent());

  fmt::print(out, "name = {}\n", spec.name);
  fmt::print(out, "spec_hash = {}\n", fnv1a_hex(spec.canonical));
  fmt::print(out, "kind = {}\n", to_string(policy.kind()));
  fmt::print(out, "d = {}\nm = {}\nbeta = {:.17g}\n", policy.dim(), policy.size(), beta);
  fmt::print(out, "rank_A_rho = {}\nnullity = {}\nrank_ambiguous = {}\n", basis.rank, basis.k,
             basis.ambiguous);
  fmt::print(out, "fisher_eigenvalues = {}\n", join(eig.eigenvalues(), 17));
  fmt::print(out, "rlhf_local_optimum = {}\n", join(optimum.theta, 17));
  fmt::print(out, "rlhf_local_optimum_residual = {:.3e}\n", optimum.residual);
  fmt::print(out, "rlhf_local_optimum_rank_deficient = {}\n", optimum.rank_deficient);
  fmt::print(out, "rlhf_local_optimum_reward = {:.17g}\n", cert.reward);
  fmt::print(out, "reference_reward = {:.17g}\n", cert.reference_reward);
  fmt::print(out, "min_norm_representative = {}\n", join(rep.reward.values(), 17));
  fmt::print(out, "latent_in_class = {}\n",
             equivalence_class(optimum.theta, bundle).contains(spec.preferences.latent(), bundle));
  fmt::print(out, "entropy_floor = {:.17g}\n", entropy_floor(spec.preferences));
  if (policy.dim() <= 8) {
    const auto proj = kl_projection_oracle(spec.preferences, policy, beta);
    const auto pc = failure_mode_certificate(policy, proj.theta, spec.preferences.latent());
    fmt::print(out, "kl_projection_theta = {}\n", join(proj.theta, 17));
    fmt::print(out, "kl_projection_excess = {:.17g}\n", proj.excess);
    fmt::print(out, "kl_projection_boundary = {}\n", proj.boundary);
    fmt::print(out, "kl_projection_reward = {:.17g}\n", pc.reward);
    fmt::print(out, "kl_projection_reversal = {}\n", pc.preference_reversal);
    fmt::print(out, "kl_projection_reduction = {}\n", pc.reward_reduction);
  }
}

namespace {

std::string fixed(double v, int decimals) {
  std::string s = fmt::format("{:.{}f}", v, decimals);
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
  return s;
}

std::string bracket(const Vector& v, int decimals) {
  std::string out = "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i > 0) out += ", ";
    out += fixed(v(i), decimals);
  }
  return out + "]";
}

}  // namespace

void emit_markdown(std::ostream& out, const ResultTable& table) {
  fmt::print(out, "<!-- {} | spec {} | seed {} | version {} -->\n", table.title, table.spec_hash,
             table.seed, table.version);
  fmt::print(out, "| Method | θ | π_θ | π_θᵀr* |\n|---|---|---|---|\n");
  for (const auto& row : table.rows) {
    if (!row.error.empty()) {
      fmt::print(out, "| {} | failed | failed | failed |\n", row.method);
      continue;
    }
    const std::string theta = row.theta.size() == 1 ? fixed(row.theta(0), 2) : bracket(row.theta, 2);
    fmt::print(out, "| {} | {} | {} | {} |\n", row.method, theta, bracket(row.policy, 2),
               fixed(row.reward, 3));
  }
  for (const auto& row : table.rows) {
    if (!row.error.empty()) fmt::print(out, "\n{} failed: {}\n", row.method, row.error);
  }
}

void emit_csv(std::ostream& out, const ResultTable& table) {
  fmt::print(out, "method,theta,policy,expected_reward,converged,preference_reversal,reward_reduction\n");
  for (const auto& row : table.rows) {
    if (!row.error.empty()) {
      fmt::print(out, "{},,,,false,,\n", row.method);
      continue;
    }
    fmt::print(out, "{},{},{},{:.17g},{},{},{}\n", row.method, join(row.theta, 17),
               join(row.policy, 17), row.reward, row.converged && !row.boundary_hit,
               row.preference_reversal, row.reward_reduction);
  }
}

void emit_count_sweep_csv(std::ostream& out, const std::vector<CountSweepRow>& rows) {
  fmt::print(out, "n12,n23,n31,method,theta,reward,preference_reversal,reward_reduction\n");
  for (const auto& r : rows) {
    fmt::print(out, "{:g},{:g},{:g},{},{:.17g},{:.17g},{},{}\n", r.point.n12, r.point.n23,
               r.point.n31, r.method, r.theta, r.reward, r.preference_reversal, r.reward_reduction);
  }
}

void emit_beta_sweep_csv(std::ostream& out, const std::vector<BetaRow>& rows) {
  fmt::print(out, "beta,quantity,value,predicted_order\n");
  for (const auto& r : rows) {
    fmt::print(out, "{:.17g},{},{:.17g},{:g}\n", r.beta, r.quantity, r.value, r.predicted_order);
  }
}

void emit_beta_fits_csv(std::ostream& out, const std::vector<BetaFit>& fits) {
  fmt::print(out, "quantity,slope,predicted_order\n");
  for (const auto& f : fits) {
    fmt::print(out, "{},{:.17g},{:g}\n", f.quantity, f.slope, f.predicted_order);
  }
}

}  // namespace auxdpo
