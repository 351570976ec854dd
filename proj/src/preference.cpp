// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The auxdpo Authors

#include "auxdpo/preference.hpp"

#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "auxdpo/rng.hpp"

namespace auxdpo {

double btl_prob(const RewardVector& r, const StateActionSpace& space, std::size_t s, std::size_t a,
                std::size_t a_prime) {
  if (a == a_prime) throw InvalidArgument("BTL probability needs two distinct responses");
  const bool flipped = a > a_prime;
  const std::size_t lo = flipped ? a_prime : a;
  const std::size_t hi = flipped ? a : a_prime;
  const double p = sigmoid(r.at(space, s, lo) - r.at(space, s, hi));
  return flipped ? 1.0 - p : p;
}

// ---------------------------------------------------------------------------

PreferenceSpec::PreferenceSpec(StateActionSpace space, RewardVector latent)
    : space_(std::move(space)), latent_(std::move(latent)) {
  require_size(latent_.values(), static_cast<Eigen::Index>(space_.size()), "latent reward");
}

PairKey PreferenceSpec::key(std::size_t s, std::size_t a, std::size_t a_prime) const {
  if (a == a_prime) throw InvalidArgument("comparison needs two distinct responses");
  if (s >= space_.num_prompts() || a >= space_.num_responses() || a_prime >= space_.num_responses()) {
    throw InvalidArgument("comparison outside the space");
  }
  return a < a_prime ? PairKey{s, a, a_prime} : PairKey{s, a_prime, a};
}

void PreferenceSpec::set_count(std::size_t s, std::size_t a, std::size_t a_prime, double n) {
  if (!std::isfinite(n) || n < 0.0) throw InvalidArgument("comparison counts must be finite and >= 0");
  const auto k = key(s, a, a_prime);
  if (n == 0.0) {
    counts_.erase(k);
  } else {
    counts_[k] = n;
  }
}

void PreferenceSpec::add_count(std::size_t s, std::size_t a, std::size_t a_prime, double n) {
  set_count(s, a, a_prime, count(s, a, a_prime) + n);
}

double PreferenceSpec::count(std::size_t s, std::size_t a, std::size_t a_prime) const {
  auto it = counts_.find(key(s, a, a_prime));
  return it == counts_.end() ? 0.0 : it->second;
}

double PreferenceSpec::total_count() const {
  double total = 0.0;
  for (const auto& [k, n] : counts_) total += n;
  return total;
}

PreferenceSpec PreferenceSpec::scaled(double factor) const {
  if (!(factor >= 0.0)) throw InvalidArgument("count scale must be nonnegative");
  PreferenceSpec out(space_, latent_);
  for (const auto& [k, n] : counts_) out.set_count(k.prompt, k.first, k.second, n * factor);
  return out;
}

PreferenceSpec PreferenceSpec::with_latent(RewardVector latent) const {
  PreferenceSpec out(space_, std::move(latent));
  out.counts_ = counts_;
  return out;
}

void PreferenceSpec::validate() const {
  if (counts_.empty()) throw InvalidArgument("preference spec has no positive counts");
}

// ---------------------------------------------------------------------------

double PreferenceDataset::total_weight() const {
  double total = 0.0;
  for (const auto& c : samples) total += c.weight;
  return total;
}

std::map<DirectedKey, double> PreferenceDataset::win_counts() const {
  std::map<DirectedKey, double> out;
  for (const auto& c : samples) out[{c.prompt, c.chosen, c.rejected}] += c.weight;
  return out;
}

PreferenceDataset sample_dataset(const PreferenceSpec& spec, std::uint64_t seed) {
  PreferenceDataset data;
  data.seed = seed;
  std::uint64_t stream = 0;
  for (const auto& [k, n] : spec.counts()) {
    ++stream;
    if (n != std::floor(n)) throw InvalidArgument("sampling requires integral comparison counts");
    const auto trials = static_cast<std::uint64_t>(n);
    const double p = btl_prob(spec.latent(), spec.space(), k.prompt, k.first, k.second);
    const CounterRng rng(seed, stream);
    std::uint64_t wins = 0;
    for (std::uint64_t t = 0; t < trials; ++t) wins += rng.uniform(t) < p ? 1 : 0;
    data.samples.reserve(data.samples.size() + trials);
    for (std::uint64_t t = 0; t < wins; ++t) data.samples.push_back({k.prompt, k.first, k.second, 1.0});
    for (std::uint64_t t = wins; t < trials; ++t) data.samples.push_back({k.prompt, k.second, k.first, 1.0});
  }
  return data;
}

std::map<DirectedKey, double> expected_counts(const PreferenceSpec& spec) {
  std::map<DirectedKey, double> out;
  for (const auto& [k, n] : spec.counts()) {
    const double p = btl_prob(spec.latent(), spec.space(), k.prompt, k.first, k.second);
    out[{k.prompt, k.first, k.second}] = n * p;
    out[{k.prompt, k.second, k.first}] = n * (1.0 - p);
  }
  return out;
}

PreferenceDataset expectation_dataset(const PreferenceSpec& spec) {
  PreferenceDataset data;
  for (const auto& [k, n] : spec.counts()) {
    const double p = btl_prob(spec.latent(), spec.space(), k.prompt, k.first, k.second);
    if (n * p > 0.0) data.samples.push_back({k.prompt, k.first, k.second, n * p});
    if (n * (1.0 - p) > 0.0) data.samples.push_back({k.prompt, k.second, k.first, n * (1.0 - p)});
  }
  return data;
}

PreferenceDataset aggregate(const PreferenceDataset& data) {
  PreferenceDataset out;
  out.seed = data.seed;
  for (const auto& [k, w] : data.win_counts()) out.samples.push_back({k.prompt, k.winner, k.loser, w});
  return out;
}

void validate_dataset(const PreferenceDataset& data, const StateActionSpace& space) {
  for (const auto& c : data.samples) {
    if (c.chosen == c.rejected) throw InvalidArgument("dataset sample compares a response with itself");
    if (c.prompt >= space.num_prompts() || c.chosen >= space.num_responses() ||
        c.rejected >= space.num_responses()) {
      throw InvalidArgument("dataset sample outside the space");
    }
    if (!std::isfinite(c.weight) || c.weight < 0.0) throw InvalidArgument("sample weights must be >= 0");
  }
}

// ---------------------------------------------------------------------------
// Text formats

namespace {

bool next_record(std::istream& in, std::istringstream& fields) {
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    fields.clear();
    fields.str(line);
    return true;
  }
  return false;
}

}  // namespace

void read_preference_table(std::istream& in, PreferenceSpec& spec) {
  std::istringstream fields;
  while (next_record(in, fields)) {
    std::string s, a, b;
    double n = 0.0;
    if (!(fields >> s >> a >> b >> n)) throw InvalidArgument("preference table lines are `s a a' n`");
    const auto& space = spec.space();
    spec.add_count(space.prompt_index(s), space.response_index(a), space.response_index(b), n);
  }
}

void write_preference_table(std::ostream& out, const PreferenceSpec& spec) {
  const auto& space = spec.space();
  const auto saved = out.precision(17);
  for (const auto& [k, n] : spec.counts()) {
    out << space.prompt_name(k.prompt) << ' ' << space.response_name(k.first) << ' '
        << space.response_name(k.second) << ' ' << n << '\n';
  }
  out.precision(saved);
}

RewardVector read_reward_table(std::istream& in, const StateActionSpace& space) {
  Vector values = Vector::Zero(static_cast<Eigen::Index>(space.size()));
  std::istringstream fields;
  while (next_record(in, fields)) {
    std::string s, a;
    double v = 0.0;
    if (!(fields >> s >> a >> v)) throw InvalidArgument("reward table lines are `s a value`");
    values(static_cast<Eigen::Index>(space.index(space.prompt_index(s), space.response_index(a)))) = v;
  }
  return RewardVector(std::move(values));
}

void write_reward_table(std::ostream& out, const RewardVector& r, const StateActionSpace& space) {
  const auto saved = out.precision(17);
  for (std::size_t s = 0; s < space.num_prompts(); ++s) {
    for (std::size_t a = 0; a < space.num_responses(); ++a) {
      out << space.prompt_name(s) << ' ' << space.response_name(a) << ' ' << r.at(space, s, a) << '\n';
    }
  }
  out.precision(saved);
}

void write_dataset_csv(std::ostream& out, const PreferenceDataset& data,
                       const StateActionSpace& space) {
  out << "prompt,chosen,rejected\n";
  for (const auto& c : data.samples) {
    if (c.weight != 1.0) throw InvalidArgument("CSV export needs unit-weight samples");
    out << space.prompt_name(c.prompt) << ',' << space.response_name(c.chosen) << ','
        << space.response_name(c.rejected) << '\n';
  }
}

PreferenceDataset read_dataset_csv(std::istream& in, const StateActionSpace& space) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("empty dataset CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "prompt,chosen,rejected") throw InvalidArgument("dataset CSV header must be prompt,chosen,rejected");
  PreferenceDataset data;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string s, w, l;
    if (!std::getline(row, s, ',') || !std::getline(row, w, ',') || !std::getline(row, l)) {
      throw InvalidArgument("malformed dataset row: " + line);
    }
    data.samples.push_back({space.prompt_index(s), space.response_index(w), space.response_index(l), 1.0});
  }
  validate_dataset(data, space);
  return data;
}

}  // namespace auxdpo
