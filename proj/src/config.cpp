// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The auxdpo Authors

#include "auxdpo/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "auxdpo/rng.hpp"

namespace auxdpo {

namespace pt = boost::property_tree;

std::vector<double> parse_number_list(const std::string& text) {
  std::string cleaned = text;
  std::replace(cleaned.begin(), cleaned.end(), ',', ' ');
  std::istringstream in(cleaned);
  std::vector<double> out;
  std::string token;
  while (in >> token) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(token, &used);
    } catch (const std::exception&) {
      throw InvalidArgument("not a number: '" + token + "'");
    }
    if (used != token.size()) throw InvalidArgument("not a number: '" + token + "'");
    out.push_back(v);
  }
  return out;
}

Matrix parse_matrix(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string row;
  while (std::getline(in, row, ';')) {
    auto values = parse_number_list(row);
    if (!values.empty()) rows.push_back(std::move(values));
  }
  if (rows.empty()) throw InvalidArgument("empty matrix");
  const std::size_t cols = rows.front().size();
  Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != cols) throw InvalidArgument("ragged matrix rows");
    for (std::size_t j = 0; j < cols; ++j) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return out;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

void ExperimentSpec::validate() const {
  if (methods.empty()) throw InvalidArgument("at least one method must be selected");
  if (policy.space() != preferences.space()) {
    throw InvalidArgument("policy and preference spaces differ");
  }
  preferences.validate();
  loss.validate();
  optim.validate();
  if (dataset_file && !std::filesystem::exists(*dataset_file)) {
    throw InvalidArgument("dataset file not found: " + dataset_file->string());
  }
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

const pt::ptree* section(const pt::ptree& root, const std::string& name) {
  auto child = root.get_child_optional(pt::ptree::path_type(name, '/'));
  return child ? &*child : nullptr;
}

std::string get(const pt::ptree* sec, const std::string& key, const std::string& fallback) {
  if (sec == nullptr) return fallback;
  auto v = sec->get_optional<std::string>(pt::ptree::path_type(key, '/'));
  return v ? trim(*v) : fallback;
}

bool has(const pt::ptree* sec, const std::string& key) {
  return sec != nullptr && sec->get_optional<std::string>(pt::ptree::path_type(key, '/'));
}

double get_double(const pt::ptree* sec, const std::string& key, double fallback) {
  const auto text = get(sec, key, "");
  if (text.empty()) return fallback;
  const auto values = parse_number_list(text);
  if (values.size() != 1) throw InvalidArgument("expected one number for '" + key + "'");
  return values.front();
}

std::uint64_t get_uint(const pt::ptree* sec, const std::string& key, std::uint64_t fallback) {
  const auto text = get(sec, key, "");
  if (text.empty()) return fallback;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(text, &used);
    if (used != text.size()) throw InvalidArgument("");
    return v;
  } catch (const std::exception&) {
    throw InvalidArgument("expected a nonnegative integer for '" + key + "'");
  }
}

bool get_bool(const pt::ptree* sec, const std::string& key, bool fallback) {
  const auto text = lower(get(sec, key, ""));
  if (text.empty()) return fallback;
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw InvalidArgument("expected a boolean for '" + key + "'");
}

std::vector<std::string> split_names(const std::string& text) {
  std::string cleaned = text;
  std::replace(cleaned.begin(), cleaned.end(), ',', ' ');
  std::istringstream in(cleaned);
  std::vector<std::string> out;
  std::string token;
  while (in >> token) out.push_back(token);
  return out;
}

bool is_count(const std::string& text) {
  return !text.empty() && std::all_of(text.begin(), text.end(),
                                      [](unsigned char c) { return std::isdigit(c) != 0; });
}

bool looks_numeric(const std::string& text) {
  try {
    return !parse_number_list(text).empty();
  } catch (const InvalidArgument&) {
    return false;
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& file) {
  std::filesystem::path p(file);
  return p.is_absolute() ? p : base / p;
}

std::ifstream open_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw InvalidArgument("cannot open '" + p.string() + "'");
  return in;
}

StateActionSpace parse_space(const pt::ptree* sec) {
  auto names = [](const std::string& text, const char* prefix, std::size_t fallback) {
    std::vector<std::string> out;
    if (text.empty() || is_count(text)) {
      const std::size_t n = text.empty() ? fallback : std::stoull(text);
      for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i + 1));
    } else {
      out = split_names(text);
    }
    return out;
  };
  auto prompts = names(get(sec, "prompts", ""), "s", 1);
  auto responses = names(get(sec, "responses", ""), "a", 3);
  if (prompts.empty() || responses.empty()) throw InvalidArgument("space needs prompts and responses");
  const auto dist_text = lower(get(sec, "prompt_dist", "uniform"));
  Vector rho;
  if (dist_text == "uniform") {
    rho = Vector::Constant(static_cast<Eigen::Index>(prompts.size()),
                           1.0 / static_cast<double>(prompts.size()));
  } else {
    const auto values = parse_number_list(dist_text);
    rho = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
    require_size(rho, static_cast<Eigen::Index>(prompts.size()), "prompt_dist");
  }
  return StateActionSpace(std::move(prompts), std::move(responses), std::move(rho));
}

Vector as_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Matrix load_matrix(const std::string& text, const std::filesystem::path& base) {
  if (looks_numeric(text) || text.find(';') != std::string::npos) return parse_matrix(text);
  std::ifstream in = open_file(resolve(base, text));
  std::stringstream buf;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (!trim(line).empty()) buf << line << ';';
  }
  return parse_matrix(buf.str());
}

ParametricPolicy parse_policy(const pt::ptree* sec, const pt::ptree* mlp_sec,
                              const StateActionSpace& space, const std::filesystem::path& base) {
  const auto kind = parse_policy_kind(lower(get(sec, "kind", "tabular-softmax")));
  const auto seed = get_uint(sec, "seed", 0);
  const auto m = static_cast<Eigen::Index>(space.size());
  CounterRng rng(seed, 0xC0F1);

  Matrix features;
  std::size_t hidden = 0;
  Eigen::Index d = m;
  if (kind == PolicyKind::linear_softmax) {
    const auto text = get(sec, "features", "random");
    if (lower(text) == "random") {
      d = static_cast<Eigen::Index>(get_uint(sec, "dim", 2));
      features = rng.normal_matrix(m, d);
    } else {
      features = load_matrix(text, base);
      d = features.cols();
    }
  } else if (kind == PolicyKind::mlp_softmax) {
    hidden = get_uint(mlp_sec, "hidden", 8);
    const auto text = get(mlp_sec, "inputs", "random");
    if (lower(text) == "random") {
      features = rng.normal_matrix(m, static_cast<Eigen::Index>(get_uint(mlp_sec, "input_dim", 4)));
    } else {
      features = load_matrix(text, base);
    }
    d = static_cast<Eigen::Index>(
        mlp_parameter_count(static_cast<std::size_t>(features.cols()), hidden));
  }

  const auto theta_text = lower(get(sec, "theta0", "zero"));
  Vector theta0;
  if (theta_text == "zero") {
    theta0 = Vector::Zero(d);
  } else if (theta_text == "uniform") {
    // Parameters whose reference policy is uniform; for the mlp the hidden
    // layer stays random so the scores are informative.
    theta0 = Vector::Zero(d);
    if (kind == PolicyKind::mlp_softmax) {
      const auto first = static_cast<Eigen::Index>(hidden) * (features.cols() + 1);
      theta0.head(first) = rng.normal_vector(first);
    }
  } else if (theta_text == "random") {
    theta0 = rng.normal_vector(d, get_double(sec, "theta0_scale", 1.0));
  } else {
    theta0 = as_vector(parse_number_list(theta_text));
  }
  require_size(theta0, d, "theta0");

  switch (kind) {
    case PolicyKind::tabular_softmax: return ParametricPolicy::tabular(space, theta0);
    case PolicyKind::linear_softmax: return ParametricPolicy::linear(space, features, theta0);
    case PolicyKind::mlp_softmax: return ParametricPolicy::mlp(space, features, hidden, theta0);
  }
  throw InvalidArgument("unknown policy kind");
}

PreferenceSpec parse_preferences(const pt::ptree* sec, const StateActionSpace& space,
                                 const std::filesystem::path& base) {
  if (sec == nullptr) throw InvalidArgument("missing [preferences] section");
  const auto latent_text = get(sec, "latent", "");
  if (latent_text.empty()) throw InvalidArgument("[preferences] needs `latent`");
  RewardVector latent;
  if (looks_numeric(latent_text)) {
    const auto values = parse_number_list(latent_text);
    Vector v = as_vector(values);
    require_size(v, static_cast<Eigen::Index>(space.size()), "latent reward");
    latent = RewardVector(std::move(v));
  } else if (latent_text.find(';') != std::string::npos) {
    std::string rows = latent_text;
    std::replace(rows.begin(), rows.end(), ';', '\n');
    std::istringstream in(rows);
    latent = read_reward_table(in, space);
  } else {
    std::ifstream in = open_file(resolve(base, latent_text));
    latent = read_reward_table(in, space);
  }

  PreferenceSpec spec(space, latent);
  const auto counts_text = get(sec, "counts", "");
  if (counts_text.empty()) throw InvalidArgument("[preferences] needs `counts`");
  if (counts_text.find(';') != std::string::npos || split_names(counts_text).size() == 4) {
    std::string rows = counts_text;
    std::replace(rows.begin(), rows.end(), ';', '\n');
    std::istringstream in(rows);
    read_preference_table(in, spec);
  } else {
    std::ifstream in = open_file(resolve(base, counts_text));
    read_preference_table(in, spec);
  }
  return spec;
}

}  // namespace

ExperimentSpec parse_experiment(std::istream& in, const std::filesystem::path& base_dir) {
  pt::ptree root;
  try {
    pt::read_ini(in, root);
  } catch (const pt::ini_parser_error& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  std::ostringstream canon;
  pt::write_ini(canon, root);

  const auto* exp = section(root, "experiment");
  ExperimentSpec spec;
  spec.canonical = canon.str();
  spec.name = get(exp, "name", "experiment");
  spec.seed = get_uint(exp, "seed", 0);
  spec.output_dir = get(exp, "output_dir", "");
  const auto data_mode = lower(get(exp, "data", "population"));
  if (data_mode != "population" && data_mode != "sampled") {
    throw InvalidArgument("[experiment] data must be population or sampled");
  }
  spec.sampled = data_mode == "sampled";
  if (has(exp, "dataset")) spec.dataset_file = resolve(base_dir, get(exp, "dataset", ""));
  for (const auto& name : split_names(get(exp, "methods", "dpo"))) {
    spec.methods.push_back(parse_loss_kind(lower(name)));
  }

  const auto space = parse_space(section(root, "space"));
  spec.policy = parse_policy(section(root, "policy"), section(root, "policy.mlp"), space, base_dir);
  spec.preferences = parse_preferences(section(root, "preferences"), space, base_dir);

  const auto* loss = section(root, "loss");
  spec.loss.beta = get_double(exp, "beta", get_double(loss, "beta", 1.0));
  spec.loss.lambda_penalty = get_double(loss, "lambda_penalty", spec.loss.lambda_penalty);
  spec.loss.lambda_null = get_double(loss, "lambda_null", spec.loss.lambda_null);
  spec.loss.lambda_amp = get_double(loss, "lambda_amp", spec.loss.lambda_amp);
  spec.loss.delta_cap = get_double(loss, "delta_cap", spec.loss.delta_cap);
  spec.loss.lambda_pos = get_double(loss, "lambda_pos", spec.loss.lambda_pos);
  spec.loss.tau = get_double(loss, "tau", spec.loss.tau);

  const auto* opt = section(root, "optim");
  auto& o = spec.optim;
  o.method = parse_search_method(lower(get(opt, "method", spec.policy.dim() == 1 ? "grid" : "gd")));
  o.grid_lo = get_double(opt, "grid_lo", o.grid_lo);
  o.grid_hi = get_double(opt, "grid_hi", o.grid_hi);
  o.grid_step = get_double(opt, "grid_step", o.grid_step);
  o.learning_rate = get_double(opt, "learning_rate", o.learning_rate);
  o.aux_learning_rate = get_double(opt, "aux_lr", get_double(loss, "aux_lr", o.aux_learning_rate));
  o.max_iters = get_uint(opt, "max_iters", o.max_iters);
  o.grad_tol = get_double(opt, "grad_tol", o.grad_tol);
  o.seed = get_uint(opt, "seed", spec.seed);
  o.restarts = get_uint(opt, "restarts", o.restarts);
  o.alternating = get_bool(opt, "alternating", o.alternating);

  spec.validate();
  return spec;
}

ExperimentSpec load_experiment(const std::filesystem::path& file) {
  std::ifstream in = open_file(file);
  return parse_experiment(in, file.parent_path().empty() ? "." : file.parent_path());
}

}  // namespace auxdpo
