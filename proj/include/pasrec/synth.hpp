#pragma once

// Synthetic interaction logs whose next item depends on the bucketed gap
// before the most recent event, plus the exact Bayes-optimal predictor.
//
// Per user: draw an archetype a, a first item from a's initial distribution
// and a hidden bucket c_1. Then for k = 1, 2, ...:
//   v_{k+1} ~ T_a[c_k](v_k, .)
//   gap_{k+1} ~ G_a[c_k]      (short or long bucket, uniform integer days inside it)
//   c_{k+1} = bucket(gap_{k+1})
// so every bucket after the first is visible in the timestamps.

#include <array>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "pasrec/datastore.hpp"

namespace pasrec::synth {

enum Bucket : int { Short = 0, Long = 1 };

struct Archetype {
  std::vector<double> initial;  // size catalog + 1, entry 0 unused
  /// transition[c][v] is the next-item distribution (size catalog + 1) after item v when the bucket is c.
  std::array<std::vector<std::vector<double>>, 2> transition;
  /// Probability that the next gap is short, given the current bucket.
  std::array<double, 2> p_short{0.5, 0.5};
};

struct SynthSpec {
  int user_count = 500;
  int catalog_size = 40;
  std::vector<Archetype> archetypes;
  std::vector<double> archetype_prior;
  double initial_short_prob = 0.5;  // prior of the hidden first bucket
  int min_events = 5;
  int max_events = 10;
  std::array<int, 2> gap_min_days{1, 80};
  std::array<int, 2> gap_max_days{10, 120};
  int gap_threshold_days = 45;  // gaps <= threshold are short
  int start_spread_days = 30;
  std::int64_t epoch_seconds = 1'300'000'000;
  std::uint64_t seed = 1;

  Bucket bucket_of(int gap_days) const { return gap_days <= gap_threshold_days ? Short : Long; }
  /// Throws ConfigError on malformed tables or overlapping gap ranges.
  void validate() const;
};

struct Generated {
  std::vector<data::RawEvent> events;  // users in order, chronological
  std::vector<int> user_archetype;
};

/// Deterministic in spec.seed; each user draws from its own derived stream.
Generated generate(const SynthSpec& spec);

/// Item ids "i<k>" for k in 1..catalog, user ids "u<n>".
std::string item_id(int item);
int parse_item_id(const std::string& id);

struct SynthHistory {
  std::vector<int> items;     // synth item numbers, oldest first
  std::vector<int> gap_days;  // items.size() - 1 gaps
};

/// Rebuilds a history from a prepared sample: vocabulary indices back to synth
/// items and normalized times back to whole-day gaps.
SynthHistory history_from_sample(const data::SequenceSample& s, const data::Vocab& vocab, std::int64_t day_span);

/// Posterior over archetypes. With use_time = false the gaps are ignored and
/// every bucket is marginalized.
std::vector<double> archetype_posterior(const SynthHistory& h, const SynthSpec& spec, bool use_time = true);

/// Posterior-predictive next-item distribution (size catalog + 1, entry 0 = 0).
std::vector<double> predictive(const SynthHistory& h, const SynthSpec& spec, bool use_time = true);

/// Synth items by descending predictive probability, ties by ascending item.
std::vector<int> bayes_optimal_rank(const SynthHistory& h, const SynthSpec& spec, bool use_time = true);

/// 2 archetypes with disjoint 20-item halves of a 40-item catalog. Each
/// transition row puts 0.8 on a dominant item and 0.1 on two others, and the
/// two buckets' rows have disjoint support. Gap buckets are i.i.d. fair coins, so only timestamps reveal the current bucket.
SynthSpec acceptance_spec(std::uint64_t seed, int user_count = 500);

/// Like acceptance_spec, but the gap law depends on the archetype (mostly
/// short for one, mostly long for the other), so the next gap is predictable.
SynthSpec toi_spec(std::uint64_t seed, int user_count = 500);

nlohmann::json to_json(const SynthSpec& spec);
SynthSpec spec_from_json(const nlohmann::json& j);

}  // namespace pasrec::synth
