#include "pasrec/datastore.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_set>

namespace pasrec::data {

using nlohmann::json;

namespace {

std::vector<std::string_view> split_fields(std::string_view line, std::string_view delim) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    const size_t pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + delim.size();
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '"' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

bool parse_timestamp(std::string_view s, std::int64_t& out) {
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  if (ec == std::errc() && ptr == end) return out >= 0;
  // Some dumps write integral seconds as "1369699200.0".
  double d = 0.0;
  auto [p2, ec2] = std::from_chars(s.data(), end, d);
  if (ec2 != std::errc() || p2 != end || !(d >= 0.0) || d != std::floor(d) || d > 9.0e15) return false;
  out = static_cast<std::int64_t>(d);
  return true;
}

std::int64_t day_of(std::int64_t seconds) { return seconds / 86400; }

}  // namespace

LoadOptions LoadOptions::from_format(const std::string& format, const std::string& delimiter_override) {
  LoadOptions o;
  if (format == "csv") {
    o.delimiter = ",";
  } else if (format == "tsv") {
    o.delimiter = "\t";
  } else {
    throw ConfigError("unknown data format '" + format + "' (csv|tsv)");
  }
  if (!delimiter_override.empty()) o.delimiter = delimiter_override;
  return o;
}

LoadOptions LoadOptions::from_config(const DataConfig& cfg) {
  LoadOptions o = from_format(cfg.format, cfg.delimiter);
  o.header = cfg.header;
  o.strict = cfg.strict;
  o.user_col = cfg.user_col;
  o.item_col = cfg.item_col;
  o.time_col = cfg.time_col;
  return o;
}

LoadResult load_events(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read interaction file " + path.string());
  if (options.delimiter.empty()) throw ConfigError("empty field delimiter");
  const int needed = std::max({options.user_col, options.item_col, options.time_col});
  if (std::min({options.user_col, options.item_col, options.time_col}) < 0) {
    throw ConfigError("column indices must be >= 0");
  }
  LoadResult result;
  std::string line;
  size_t line_no = 0;
  bool header_pending = options.header;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    if (!view.empty() && view.back() == '\r') view.remove_suffix(1);
    if (trim(view).empty()) continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    ++result.rows;
    const auto fields = split_fields(view, options.delimiter);
    std::string problem;
    RawEvent ev;
    if (static_cast<int>(fields.size()) <= needed) {
      problem = "expected at least " + std::to_string(needed + 1) + " fields";
    } else {
      ev.user_id = std::string(trim(fields[static_cast<size_t>(options.user_col)]));
      ev.item_id = std::string(trim(fields[static_cast<size_t>(options.item_col)]));
      if (ev.user_id.empty() || ev.item_id.empty()) {
        problem = "empty user or item id";
      } else if (!parse_timestamp(trim(fields[static_cast<size_t>(options.time_col)]), ev.timestamp)) {
        problem = "non-numeric or negative timestamp";
      }
    }
    if (!problem.empty()) {
      const std::string msg = path.filename().string() + ":" + std::to_string(line_no) + ": " + problem;
      if (options.strict) throw DataError(msg);
      ++result.skipped;
      result.warnings.push_back(msg);
      continue;
    }
    result.events.push_back(std::move(ev));
  }
  return result;
}

std::vector<RawEvent> filter_core(const std::vector<RawEvent>& events, int min_count) {
  if (min_count < 1) throw ConfigError("min_count must be >= 1");
  std::vector<std::uint8_t> alive(events.size(), 1);
  bool changed = true;
  while (changed) {
    changed = false;
    std::unordered_map<std::string_view, int> user_count;
    std::unordered_map<std::string_view, int> item_count;
    for (size_t i = 0; i < events.size(); ++i) {
      if (!alive[i]) continue;
      ++user_count[events[i].user_id];
      ++item_count[events[i].item_id];
    }
    for (size_t i = 0; i < events.size(); ++i) {
      if (!alive[i]) continue;
      if (user_count[events[i].user_id] < min_count || item_count[events[i].item_id] < min_count) {
        alive[i] = 0;
        changed = true;
      }
    }
  }

  std::unordered_map<std::string_view, size_t> user_slot;
  std::vector<std::vector<size_t>> groups;
  for (size_t i = 0; i < events.size(); ++i) {
    if (!alive[i]) continue;
    auto [it, inserted] = user_slot.try_emplace(events[i].user_id, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  if (groups.empty()) throw DataError("dataset degenerate: no interactions survive filtering");

  std::vector<RawEvent> out;
  for (auto& g : groups) {
    std::stable_sort(g.begin(), g.end(),
                     [&](size_t a, size_t b) { return events[a].timestamp < events[b].timestamp; });
    for (size_t i : g) out.push_back(events[i]);
  }
  return out;
}

Vocab Vocab::build(const std::vector<RawEvent>& events) {
  Vocab v;
  for (const auto& e : events) {
    if (v.item_to_index_.try_emplace(e.item_id, static_cast<int>(v.index_to_item_.size())).second) {
      v.index_to_item_.push_back(e.item_id);
    }
  }
  return v;
}

Vocab Vocab::from_items(const std::vector<std::string>& items) {
  Vocab v;
  for (const auto& item : items) {
    if (!v.item_to_index_.try_emplace(item, static_cast<int>(v.index_to_item_.size())).second) {
      throw DataError("duplicate item id in vocabulary: " + item);
    }
    v.index_to_item_.push_back(item);
  }
  return v;
}

int Vocab::index_of(const std::string& item) const {
  auto it = item_to_index_.find(item);
  if (it == item_to_index_.end()) throw DataError("unknown item id " + item);
  return it->second;
}

const std::string& Vocab::item_at(int index) const {
  if (index <= kPadding || index >= static_cast<int>(index_to_item_.size())) {
    throw std::out_of_range("vocabulary index " + std::to_string(index));
  }
  return index_to_item_[static_cast<size_t>(index)];
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (size_t i = 1; i < index_to_item_.size(); ++i) {
    for (unsigned char ch : index_to_item_[i]) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
    h ^= 0xff;
    h *= 1099511628211ULL;
  }
  return h;
}

TimeNormalization normalize_times(const std::vector<std::vector<std::int64_t>>& per_user_seconds) {
  TimeNormalization out;
  bool any = false;
  std::int64_t lo = 0;
  std::int64_t hi = 0;
  for (const auto& user : per_user_seconds) {
    for (std::int64_t s : user) {
      const std::int64_t d = day_of(s);
      if (!any) {
        lo = hi = d;
        any = true;
      }
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
  }
  out.min_day = lo;
  out.day_span = hi - lo;
  out.times.reserve(per_user_seconds.size());
  for (const auto& user : per_user_seconds) {
    std::vector<double> t;
    t.reserve(user.size());
    for (std::int64_t s : user) {
      t.push_back(out.day_span == 0 ? 0.0
                                    : static_cast<double>(day_of(s) - lo) / static_cast<double>(out.day_span));
    }
    out.times.push_back(std::move(t));
  }
  return out;
}

Timelines build_timelines(const std::vector<RawEvent>& filtered, const Vocab& vocab) {
  Timelines out;
  std::unordered_map<std::string_view, size_t> slot;
  std::vector<std::vector<std::int64_t>> seconds;
  for (const auto& e : filtered) {
    auto [it, inserted] = slot.try_emplace(e.user_id, out.users.size());
    if (inserted) {
      out.users.push_back(UserTimeline{e.user_id, {}, {}});
      seconds.emplace_back();
    }
    out.users[it->second].items.push_back(vocab.index_of(e.item_id));
    seconds[it->second].push_back(e.timestamp);
  }
  for (size_t u = 0; u < seconds.size(); ++u) {
    for (size_t i = 1; i < seconds[u].size(); ++i) {
      if (seconds[u][i] < seconds[u][i - 1]) {
        throw DataError("events of user " + out.users[u].user_id + " are not chronological");
      }
    }
  }
  auto norm = normalize_times(seconds);
  for (size_t u = 0; u < out.users.size(); ++u) out.users[u].times = std::move(norm.times[u]);
  out.min_day = norm.min_day;
  out.day_span = norm.day_span;
  return out;
}

int SequenceSample::real_length() const {
  return static_cast<int>(std::count(history_mask.begin(), history_mask.end(), std::uint8_t{1}));
}

std::vector<SequenceSample> build_sequences(const Timelines& timelines, int max_len) {
  if (max_len < 2) throw ConfigError("max_len must be >= 2");
  std::vector<SequenceSample> out;
  for (const auto& user : timelines.users) {
    const int n = static_cast<int>(user.items.size());
    if (n < 2) continue;
    for (int pos = 1; pos < n; ++pos) {
      SequenceSample s;
      s.history_items.assign(static_cast<size_t>(max_len), Vocab::kPadding);
      s.history_times.assign(static_cast<size_t>(max_len), 0.0);
      s.history_mask.assign(static_cast<size_t>(max_len), 0);
      const int take = std::min(pos, max_len);
      for (int i = 0; i < take; ++i) {
        const size_t dst = static_cast<size_t>(max_len - take + i);
        const size_t src = static_cast<size_t>(pos - take + i);
        s.history_items[dst] = user.items[src];
        s.history_times[dst] = user.times[src];
        s.history_mask[dst] = 1;
      }
      s.target_item = user.items[static_cast<size_t>(pos)];
      s.target_time = user.times[static_cast<size_t>(pos)];
      s.user_id = user.user_id;
      s.position = pos;
      s.user_length = n;
      out.push_back(std::move(s));
    }
  }
  return out;
}

SplitBundle split(const std::vector<SequenceSample>& samples, SplitKind kind, std::uint64_t seed) {
  if (samples.empty()) throw DataError("dataset degenerate: no sequence samples to split");
  SplitBundle b;
  b.kind = kind;
  b.seed = seed;
  if (kind == SplitKind::LOO) {
    for (const auto& s : samples) {
      if (s.position == s.user_length - 1) {
        b.test.push_back(s);
      } else if (s.position == s.user_length - 2) {
        b.valid.push_back(s);
      } else {
        b.train.push_back(s);
      }
    }
    return b;
  }
  std::vector<size_t> order(samples.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const size_t n = samples.size();
  const size_t n_valid = static_cast<size_t>(std::llround(static_cast<double>(n) * 0.1));
  const size_t n_test = static_cast<size_t>(std::llround(static_cast<double>(n) * 0.1));
  const size_t n_train = n - n_valid - n_test;
  for (size_t i = 0; i < n; ++i) {
    const auto& s = samples[order[i]];
    if (i < n_train) {
      b.train.push_back(s);
    } else if (i < n_train + n_valid) {
      b.valid.push_back(s);
    } else {
      b.test.push_back(s);
    }
  }
  return b;
}

DatasetStats compute_stats(const Timelines& timelines, const Vocab& vocab) {
  DatasetStats s;
  s.users = timelines.users.size();
  s.items = static_cast<size_t>(vocab.item_count());
  for (const auto& u : timelines.users) s.actions += u.items.size();
  if (s.users > 0) s.avg_length = static_cast<double>(s.actions) / static_cast<double>(s.users);
  if (s.users > 0 && s.items > 0) {
    s.sparsity = 1.0 - static_cast<double>(s.actions) / (static_cast<double>(s.users) * static_cast<double>(s.items));
  }
  return s;
}

json stats_to_json(const DatasetStats& s) {
  return json{{"sequences", s.users},
              {"items", s.items},
              {"actions", s.actions},
              {"avg_length", s.avg_length},
              {"sparsity", s.sparsity}};
}

PreparedData prepare(const std::vector<RawEvent>& events, int min_count, int max_len,
                     SplitKind kind, std::uint64_t seed) {
  if (events.empty()) throw DataError("dataset degenerate: no interactions");
  PreparedData p;
  const auto filtered = filter_core(events, min_count);
  p.vocab = Vocab::build(filtered);
  p.timelines = build_timelines(filtered, p.vocab);
  p.bundle = split(build_sequences(p.timelines, max_len), kind, seed);
  p.stats = compute_stats(p.timelines, p.vocab);
  p.max_len = max_len;
  p.min_count = min_count;
  return p;
}

namespace {

json sample_to_json(const SequenceSample& s) {
  return json{{"items", s.history_items}, {"times", s.history_times}, {"mask", s.history_mask},
              {"target", s.target_item},  {"target_time", s.target_time}, {"user", s.user_id},
              {"position", s.position},   {"user_length", s.user_length}};
}

SequenceSample sample_from_json(const json& j) {
  SequenceSample s;
  s.history_items = j.at("items").get<std::vector<int>>();
  s.history_times = j.at("times").get<std::vector<double>>();
  s.history_mask = j.at("mask").get<std::vector<std::uint8_t>>();
  s.target_item = j.at("target").get<int>();
  s.target_time = j.at("target_time").get<double>();
  s.user_id = j.at("user").get<std::string>();
  s.position = j.at("position").get<int>();
  s.user_length = j.at("user_length").get<int>();
  return s;
}

json samples_to_json(const std::vector<SequenceSample>& v) {
  json arr = json::array();
  for (const auto& s : v) arr.push_back(sample_to_json(s));
  return arr;
}

std::vector<SequenceSample> samples_from_json(const json& arr) {
  std::vector<SequenceSample> v;
  for (const auto& j : arr) v.push_back(sample_from_json(j));
  return v;
}

}  // namespace

void save_snapshot(const PreparedData& data, const std::filesystem::path& path) {
  json j;
  j["format"] = "pasrec-snapshot";
  j["version"] = 1;
  j["max_len"] = data.max_len;
  j["min_count"] = data.min_count;
  j["vocab"] = std::vector<std::string>(data.vocab.items().begin() + 1, data.vocab.items().end());
  j["vocab_hash"] = data.vocab.hash();
  j["min_day"] = data.timelines.min_day;
  j["day_span"] = data.timelines.day_span;
  json users = json::array();
  for (const auto& u : data.timelines.users) {
    users.push_back(json{{"user", u.user_id}, {"items", u.items}, {"times", u.times}});
  }
  j["timelines"] = std::move(users);
  j["split"] = {{"kind", to_string(data.bundle.kind)},
                {"seed", data.bundle.seed},
                {"train", samples_to_json(data.bundle.train)},
                {"valid", samples_to_json(data.bundle.valid)},
                {"test", samples_to_json(data.bundle.test)}};
  j["stats"] = stats_to_json(data.stats);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write snapshot " + path.string());
  out << j.dump() << '\n';
}

PreparedData load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read snapshot " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("snapshot " + path.string() + " is not valid JSON: " + e.what());
  }
  if (j.value("format", "") != "pasrec-snapshot" || j.value("version", 0) != 1) {
    throw DataError("unsupported snapshot format in " + path.string());
  }
  PreparedData p;
  p.max_len = j.at("max_len").get<int>();
  p.min_count = j.at("min_count").get<int>();
  p.vocab = Vocab::from_items(j.at("vocab").get<std::vector<std::string>>());
  if (p.vocab.hash() != j.at("vocab_hash").get<std::uint64_t>()) {
    throw DataError("snapshot vocabulary hash mismatch in " + path.string());
  }
  p.timelines.min_day = j.at("min_day").get<std::int64_t>();
  p.timelines.day_span = j.at("day_span").get<std::int64_t>();
  for (const auto& u : j.at("timelines")) {
    p.timelines.users.push_back(UserTimeline{u.at("user").get<std::string>(),
                                             u.at("items").get<std::vector<int>>(),
                                             u.at("times").get<std::vector<double>>()});
  }
  const auto& sp = j.at("split");
  p.bundle.kind = parse_split_kind(sp.at("kind").get<std::string>());
  p.bundle.seed = sp.at("seed").get<std::uint64_t>();
  p.bundle.train = samples_from_json(sp.at("train"));
  p.bundle.valid = samples_from_json(sp.at("valid"));
  p.bundle.test = samples_from_json(sp.at("test"));
  p.stats = compute_stats(p.timelines, p.vocab);
  return p;
}

}  // namespace pasrec::data
