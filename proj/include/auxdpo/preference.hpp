// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The auxdpo Authors

#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <vector>

#include "auxdpo/common.hpp"
#include "auxdpo/space.hpp"

namespace auxdpo {

/// Unordered comparison at one prompt, stored canonically with first < second.
struct PairKey {
  std::size_t prompt = 0;
  std::size_t first = 0;
  std::size_t second = 0;
  auto operator<=>(const PairKey&) const = default;
};

/// Directed comparison: winner preferred over loser at prompt.
struct DirectedKey {
  std::size_t prompt = 0;
  std::size_t winner = 0;
  std::size_t loser = 0;
  auto operator<=>(const DirectedKey&) const = default;
};

/// sigma(r(s,a) - r(s,a')). The two orders of a pair sum to exactly 1.
double btl_prob(const RewardVector& r, const StateActionSpace& space, std::size_t s, std::size_t a,
                std::size_t a_prime);

/// Comparison counts n_{s,a,a'} together with the latent reward generating them.
///
/// Counts are real so population experiments may use fractional weights;
/// sampling requires integral counts.
class PreferenceSpec {
 public:
  PreferenceSpec(StateActionSpace space, RewardVector latent);

  /// Set the total count for the unordered pair {a, a'} at prompt s.
  void set_count(std::size_t s, std::size_t a, std::size_t a_prime, double n);
  void add_count(std::size_t s, std::size_t a, std::size_t a_prime, double n);
  double count(std::size_t s, std::size_t a, std::size_t a_prime) const;

  const std::map<PairKey, double>& counts() const { return counts_; }
  const StateActionSpace& space() const { return space_; }
  const RewardVector& latent() const { return latent_; }

  double total_count() const;
  PreferenceSpec scaled(double factor) const;
  PreferenceSpec with_latent(RewardVector latent) const;

  /// Throws InvalidArgument unless at least one count is strictly positive.
  void validate() const;

 private:
  PairKey key(std::size_t s, std::size_t a, std::size_t a_prime) const;

  StateActionSpace space_;
  RewardVector latent_;
  std::map<PairKey, double> counts_;
};

struct Comparison {
  std::size_t prompt = 0;
  std::size_t chosen = 0;
  std::size_t rejected = 0;
  double weight = 1.0;
};

/// Finite list of labelled comparisons. Weighted samples arise only from
/// aggregation or expectation matching; sampled datasets carry unit weights.
struct PreferenceDataset {
  std::vector<Comparison> samples;
  std::uint64_t seed = 0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double total_weight() const;
  /// Directed win counts N_{s, chosen, rejected}.
  std::map<DirectedKey, double> win_counts() const;
};

/// For every pair draws N ~ Binomial(n, p_BTL(r*)) as n Bernoulli draws from
/// a counter-based stream keyed by (seed, pair), emitting N samples a > a'
/// followed by n - N samples a' > a. Pairs are visited in canonical order.
PreferenceDataset sample_dataset(const PreferenceSpec& spec, std::uint64_t seed);

/// n_{s,a,a'} p_BTL(r*) for both directions of every pair.
std::map<DirectedKey, double> expected_counts(const PreferenceSpec& spec);

/// Weighted dataset whose directed weights equal expected_counts(spec).
PreferenceDataset expectation_dataset(const PreferenceSpec& spec);

/// Collapse identical (prompt, chosen, rejected) samples into weights.
PreferenceDataset aggregate(const PreferenceDataset& data);

void validate_dataset(const PreferenceDataset& data, const StateActionSpace& space);

// Plain-text formats --------------------------------------------------------

/// One line per pair: `s a a' n`. Blank lines and `#` comments are ignored.
void read_preference_table(std::istream& in, PreferenceSpec& spec);
void write_preference_table(std::ostream& out, const PreferenceSpec& spec);

/// One line per entry: `s a value`. Missing entries are zero.
RewardVector read_reward_table(std::istream& in, const StateActionSpace& space);
void write_reward_table(std::ostream& out, const RewardVector& r, const StateActionSpace& space);

/// CSV with header `prompt,chosen,rejected`; unit-weight samples only.
void write_dataset_csv(std::ostream& out, const PreferenceDataset& data,
                       const StateActionSpace& space);
PreferenceDataset read_dataset_csv(std::istream& in, const StateActionSpace& space);

}  // namespace auxdpo
