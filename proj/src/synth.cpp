#include "pasrec/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace pasrec::synth {

using nlohmann::json;

namespace {

std::uint64_t mix(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

int draw(const std::vector<double>& p, std::mt19937_64& rng) {
  std::discrete_distribution<int> d(p.begin(), p.end());
  return d(rng);
}

void check_distribution(const std::vector<double>& p, size_t size, const char* what) {
  if (p.size() != size) throw ConfigError(std::string("synth: wrong size for ") + what);
  double s = 0.0;
  for (double x : p) {
    if (!(x >= 0.0)) throw ConfigError(std::string("synth: negative probability in ") + what);
    s += x;
  }
  if (std::abs(s - 1.0) > 1e-9) throw ConfigError(std::string("synth: ") + what + " does not sum to 1");
}

}  // namespace

void SynthSpec::validate() const {
  if (user_count < 1 || catalog_size < 1) throw ConfigError("synth: user_count and catalog_size must be positive");
  if (archetypes.empty()) throw ConfigError("synth: no archetypes");
  check_distribution(archetype_prior, archetypes.size(), "archetype prior");
  const auto n = static_cast<size_t>(catalog_size) + 1;
  for (const auto& a : archetypes) {
    check_distribution(a.initial, n, "initial distribution");
    if (a.initial[0] != 0.0) throw ConfigError("synth: item 0 is reserved");
    for (const auto& table : a.transition) {
      if (table.size() != n) throw ConfigError("synth: transition table needs catalog + 1 rows");
      for (size_t v = 1; v < n; ++v) {
        check_distribution(table[v], n, "transition row");
        if (table[v][0] != 0.0) throw ConfigError("synth: item 0 is reserved");
      }
    }
    for (double p : a.p_short) {
      if (p < 0.0 || p > 1.0) throw ConfigError("synth: p_short outside [0,1]");
    }
  }
  if (initial_short_prob < 0.0 || initial_short_prob > 1.0) throw ConfigError("synth: initial_short_prob outside [0,1]");
  if (min_events < 1 || max_events < min_events) throw ConfigError("synth: bad event count range");
  if (gap_min_days[Short] < 0 || gap_min_days[Short] > gap_max_days[Short] ||
      gap_max_days[Short] > gap_threshold_days || gap_min_days[Long] <= gap_threshold_days ||
      gap_min_days[Long] > gap_max_days[Long]) {
    throw ConfigError("synth: gap ranges must sit on either side of the threshold");
  }
  if (start_spread_days < 0) throw ConfigError("synth: negative start spread");
}

std::string item_id(int item) { return "i" + std::to_string(item); }

int parse_item_id(const std::string& id) {
  if (id.size() < 2 || id[0] != 'i') throw data::DataError("not a synth item id: " + id);
  return std::stoi(id.substr(1));
}

Generated generate(const SynthSpec& spec) {
  spec.validate();
  Generated out;
  for (int u = 0; u < spec.user_count; ++u) {
    std::mt19937_64 rng(mix(spec.seed, static_cast<std::uint64_t>(u)));
    const int a = draw(spec.archetype_prior, rng);
    const Archetype& arch = spec.archetypes[static_cast<size_t>(a)];
    const int n = std::uniform_int_distribution<int>(spec.min_events, spec.max_events)(rng);
    std::int64_t day = std::uniform_int_distribution<int>(0, spec.start_spread_days)(rng);
    int item = draw(arch.initial, rng);
    int bucket = std::bernoulli_distribution(spec.initial_short_prob)(rng) ? Short : Long;
    const std::string user = "u" + std::to_string(u);
    auto emit = [&] {
      out.events.push_back(data::RawEvent{user, item_id(item), spec.epoch_seconds + day * 86400 + 3600});
    };
    emit();
    for (int k = 1; k < n; ++k) {
      item = draw(arch.transition[static_cast<size_t>(bucket)][static_cast<size_t>(item)], rng);
      bucket = std::bernoulli_distribution(arch.p_short[static_cast<size_t>(bucket)])(rng) ? Short : Long;
      day += std::uniform_int_distribution<int>(spec.gap_min_days[static_cast<size_t>(bucket)],
                                                spec.gap_max_days[static_cast<size_t>(bucket)])(rng);
      emit();
    }
    out.user_archetype.push_back(a);
  }
  return out;
}

SynthHistory history_from_sample(const data::SequenceSample& s, const data::Vocab& vocab, std::int64_t day_span) {
  SynthHistory h;
  double prev = 0.0;
  for (size_t i = 0; i < s.history_items.size(); ++i) {
    if (!s.history_mask[i]) continue;
    if (!h.items.empty()) {
      h.gap_days.push_back(static_cast<int>(std::llround((s.history_times[i] - prev) * static_cast<double>(day_span))));
    }
    h.items.push_back(parse_item_id(vocab.item_at(s.history_items[i])));
    prev = s.history_times[i];
  }
  return h;
}

namespace {

/// Joint weight P(history, a) split by the current (last) bucket: out[c] = P(h, c_m = c | a).
std::array<double, 2> forward(const SynthHistory& h, const SynthSpec& spec, const Archetype& a, bool use_time) {
  if (h.items.empty()) throw std::invalid_argument("synth: empty history");
  if (h.gap_days.size() + 1 != h.items.size()) throw std::invalid_argument("synth: need one gap per consecutive pair");
  const double first = a.initial[static_cast<size_t>(h.items[0])];
  std::array<double, 2> alpha{first * spec.initial_short_prob, first * (1.0 - spec.initial_short_prob)};
  for (size_t k = 0; k + 1 < h.items.size(); ++k) {
    const auto from = static_cast<size_t>(h.items[k]);
    const auto to = static_cast<size_t>(h.items[k + 1]);
    std::array<double, 2> next{0.0, 0.0};
    for (int c = 0; c < 2; ++c) {
      const double move = alpha[static_cast<size_t>(c)] * a.transition[static_cast<size_t>(c)][from][to];
      const double ps = a.p_short[static_cast<size_t>(c)];
      for (int b = 0; b < 2; ++b) {
        double weight = move * (b == Short ? ps : 1.0 - ps);
        if (use_time) {
          const int gap = h.gap_days[k];
          const int lo = spec.gap_min_days[static_cast<size_t>(b)];
          const int hi = spec.gap_max_days[static_cast<size_t>(b)];
          weight *= gap >= lo && gap <= hi ? 1.0 / (hi - lo + 1) : 0.0;
        }
        next[static_cast<size_t>(b)] += weight;
      }
    }
    alpha = next;
  }
  return alpha;
}

}  // namespace

std::vector<double> archetype_posterior(const SynthHistory& h, const SynthSpec& spec, bool use_time) {
  std::vector<double> post(spec.archetypes.size());
  for (size_t i = 0; i < post.size(); ++i) {
    const auto alpha = forward(h, spec, spec.archetypes[i], use_time);
    post[i] = spec.archetype_prior[i] * (alpha[0] + alpha[1]);
  }
  const double z = std::accumulate(post.begin(), post.end(), 0.0);
  if (!(z > 0.0)) throw std::invalid_argument("synth: history has zero probability under the spec");
  for (double& p : post) p /= z;
  return post;
}

std::vector<double> predictive(const SynthHistory& h, const SynthSpec& spec, bool use_time) {
  std::vector<double> out(static_cast<size_t>(spec.catalog_size) + 1, 0.0);
  double z = 0.0;
  const auto last = static_cast<size_t>(h.items.back());
  for (size_t i = 0; i < spec.archetypes.size(); ++i) {
    const Archetype& a = spec.archetypes[i];
    const auto alpha = forward(h, spec, a, use_time);
    for (int c = 0; c < 2; ++c) {
      const double w = spec.archetype_prior[i] * alpha[static_cast<size_t>(c)];
      z += w;
      const auto& row = a.transition[static_cast<size_t>(c)][last];
      for (size_t v = 1; v < out.size(); ++v) out[v] += w * row[v];
    }
  }
  if (!(z > 0.0)) throw std::invalid_argument("synth: history has zero probability under the spec");
  for (double& p : out) p /= z;
  return out;
}

std::vector<int> bayes_optimal_rank(const SynthHistory& h, const SynthSpec& spec, bool use_time) {
  const auto p = predictive(h, spec, use_time);
  std::vector<int> order(static_cast<size_t>(spec.catalog_size));
  std::iota(order.begin(), order.end(), 1);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return p[static_cast<size_t>(a)] > p[static_cast<size_t>(b)]; });
  return order;
}

namespace {

constexpr double kDominant = 0.8;
constexpr size_t kMinor = 2;

// Transitions stay inside items [first, first + count); rows of foreign items
// (never reached) are uniform over the archetype's own items.
Archetype permutation_archetype(int catalog, int first, int count, std::mt19937_64& rng) {
  Archetype a;
  const auto n = static_cast<size_t>(catalog) + 1;
  a.initial.assign(n, 0.0);
  std::vector<int> items(static_cast<size_t>(count));
  std::iota(items.begin(), items.end(), first);
  for (int v : items) a.initial[static_cast<size_t>(v)] = 1.0 / count;
  std::vector<int> dominant_short = items;
  std::vector<int> dominant_long = items;
  std::shuffle(dominant_short.begin(), dominant_short.end(), rng);
  // Redraw until no item shares its dominant successor across buckets.
  do {
    std::shuffle(dominant_long.begin(), dominant_long.end(), rng);
  } while ([&] {
    for (size_t i = 0; i < items.size(); ++i) {
      if (dominant_short[i] == dominant_long[i]) return true;
    }
    return false;
  }());
  for (auto& table : a.transition) table.assign(n, a.initial);
  for (size_t i = 0; i < items.size(); ++i) {
    const int v = items[i];
    const int ds = dominant_short[i];
    const int dl = dominant_long[i];
    std::vector<int> pool;
    for (int j : items) {
      if (j != ds && j != dl) pool.push_back(j);
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    auto& rs = a.transition[Short][static_cast<size_t>(v)];
    auto& rl = a.transition[Long][static_cast<size_t>(v)];
    rs.assign(n, 0.0);
    rl.assign(n, 0.0);
    rs[static_cast<size_t>(ds)] = kDominant;
    rl[static_cast<size_t>(dl)] = kDominant;
    // The two buckets' supports are disjoint.
    for (size_t k = 0; k < kMinor; ++k) {
      rs[static_cast<size_t>(pool[k])] = (1.0 - kDominant) / kMinor;
      rl[static_cast<size_t>(pool[k + kMinor])] = (1.0 - kDominant) / kMinor;
    }
  }
  return a;
}

}  // namespace

SynthSpec acceptance_spec(std::uint64_t seed, int user_count) {
  SynthSpec spec;
  spec.user_count = user_count;
  spec.catalog_size = 40;
  spec.seed = seed;
  std::mt19937_64 rng(mix(seed, 0xa5a5));
  const int per = spec.catalog_size / 2;
  for (int i = 0; i < 2; ++i) spec.archetypes.push_back(permutation_archetype(spec.catalog_size, 1 + i * per, per, rng));
  spec.archetype_prior = {0.5, 0.5};
  spec.validate();
  return spec;
}

SynthSpec toi_spec(std::uint64_t seed, int user_count) {
  SynthSpec spec = acceptance_spec(seed, user_count);
  spec.archetypes[0].p_short = {0.95, 0.95};
  spec.archetypes[1].p_short = {0.05, 0.05};
  return spec;
}

json to_json(const SynthSpec& s) {
  json arch = json::array();
  for (const auto& a : s.archetypes) {
    arch.push_back({{"initial", a.initial},
                    {"transition_short", a.transition[Short]},
                    {"transition_long", a.transition[Long]},
                    {"p_short", a.p_short}});
  }
  return json{{"user_count", s.user_count},
              {"catalog_size", s.catalog_size},
              {"archetypes", arch},
              {"archetype_prior", s.archetype_prior},
              {"initial_short_prob", s.initial_short_prob},
              {"min_events", s.min_events},
              {"max_events", s.max_events},
              {"gap_min_days", s.gap_min_days},
              {"gap_max_days", s.gap_max_days},
              {"gap_threshold_days", s.gap_threshold_days},
              {"start_spread_days", s.start_spread_days},
              {"epoch_seconds", s.epoch_seconds},
              {"seed", s.seed}};
}

SynthSpec spec_from_json(const json& j) {
  SynthSpec s;
  s.user_count = j.at("user_count").get<int>();
  s.catalog_size = j.at("catalog_size").get<int>();
  for (const auto& a : j.at("archetypes")) {
    Archetype x;
    x.initial = a.at("initial").get<std::vector<double>>();
    x.transition[Short] = a.at("transition_short").get<std::vector<std::vector<double>>>();
    x.transition[Long] = a.at("transition_long").get<std::vector<std::vector<double>>>();
    x.p_short = a.at("p_short").get<std::array<double, 2>>();
    s.archetypes.push_back(std::move(x));
  }
  s.archetype_prior = j.at("archetype_prior").get<std::vector<double>>();
  s.initial_short_prob = j.at("initial_short_prob").get<double>();
  s.min_events = j.at("min_events").get<int>();
  s.max_events = j.at("max_events").get<int>();
  s.gap_min_days = j.at("gap_min_days").get<std::array<int, 2>>();
  s.gap_max_days = j.at("gap_max_days").get<std::array<int, 2>>();
  s.gap_threshold_days = j.at("gap_threshold_days").get<int>();
  s.start_spread_days = j.at("start_spread_days").get<int>();
  s.epoch_seconds = j.at("epoch_seconds").get<std::int64_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.validate();
  return s;
}

}  // namespace pasrec::synth
