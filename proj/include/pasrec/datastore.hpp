#pragma once

// Interaction-log ingestion, k-core filtering, day-level time normalization,
// padded sequence construction and leave-one-out / 8:1:1 splits.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "pasrec/config.hpp"

namespace pasrec::data {

/// Bad input data (unreadable file, malformed row in strict mode, degenerate
/// dataset). The CLI maps it to exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RawEvent {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;  // seconds since epoch

  bool operator==(const RawEvent&) const = default;
};

struct LoadOptions {
  std::string delimiter = ",";
  bool header = false;
  bool strict = false;
  int user_col = 0;
  int item_col = 1;
  int time_col = 2;

  /// "csv" or "tsv"; a non-empty `delimiter_override` replaces the format's delimiter.
  static LoadOptions from_format(const std::string& format, const std::string& delimiter_override = "");
  static LoadOptions from_config(const DataConfig& cfg);
};

struct LoadResult {
  std::vector<RawEvent> events;
  std::size_t rows = 0;  // non-empty data rows seen
  std::size_t skipped = 0;
  std::vector<std::string> warnings;  // one per skipped row, with its line number
};

LoadResult load_events(const std::filesystem::path& path, const LoadOptions& options);

/// Drops users and items with fewer than `min_count` events until nothing
/// changes. The result is grouped per user (first-appearance order) and
/// chronological within a user; equal timestamps keep file order.
std::vector<RawEvent> filter_core(const std::vector<RawEvent>& events, int min_count);

/// Item id <-> index. Index 0 is the padding token and never names an item.
class Vocab {
 public:
  static constexpr int kPadding = 0;

  Vocab() : index_to_item_{"<pad>"} {}
  /// Assigns indices 1..n in first-appearance order.
  static Vocab build(const std::vector<RawEvent>& events);
  static Vocab from_items(const std::vector<std::string>& items_in_index_order);

  int item_count() const { return static_cast<int>(index_to_item_.size()) - 1; }
  int index_of(const std::string& item) const;  // throws DataError when unknown
  bool contains(const std::string& item) const { return item_to_index_.contains(item); }
  const std::string& item_at(int index) const;
  const std::vector<std::string>& items() const { return index_to_item_; }
  /// FNV-1a over the ordered item ids; stored in checkpoints.
  std::uint64_t hash() const;

 private:
  std::unordered_map<std::string, int> item_to_index_;
  std::vector<std::string> index_to_item_;
};

/// Result of day-level normalization: t = (floor(s / 86400) - min_day) / span,
/// with one dataset-wide min and span (span 0 maps everything to 0).
struct TimeNormalization {
  std::vector<std::vector<double>> times;  // per user, same shape as the input
  std::int64_t min_day = 0;
  std::int64_t day_span = 0;

  double to_day(double normalized) const { return static_cast<double>(min_day) + normalized * static_cast<double>(day_span); }
};

TimeNormalization normalize_times(const std::vector<std::vector<std::int64_t>>& per_user_seconds);

struct UserTimeline {
  std::string user_id;
  std::vector<int> items;
  std::vector<double> times;  // normalized
};

struct Timelines {
  std::vector<UserTimeline> users;
  std::int64_t min_day = 0;
  std::int64_t day_span = 0;
};

/// Groups filtered events per user, maps items through the vocabulary and normalizes time.
Timelines build_timelines(const std::vector<RawEvent>& filtered, const Vocab& vocab);

struct SequenceSample {
  std::vector<int> history_items;       // length L, left-padded with 0
  std::vector<double> history_times;    // length L, padding carries 0
  std::vector<std::uint8_t> history_mask;
  int target_item = 0;
  double target_time = 0.0;
  std::string user_id;
  int position = 0;     // index of the target inside the user's timeline
  int user_length = 0;  // events in the user's timeline

  int real_length() const;
  int last_item() const { return history_items.back(); }
  double last_time() const { return history_times.back(); }

  bool operator==(const SequenceSample&) const = default;
};

/// One sample per target position n >= 1 of every user with >= 2 events; the
/// history is the (at most) max_len events right before the target.
std::vector<SequenceSample> build_sequences(const Timelines& timelines, int max_len);

struct SplitBundle {
  std::vector<SequenceSample> train;
  std::vector<SequenceSample> valid;
  std::vector<SequenceSample> test;
  SplitKind kind = SplitKind::LOO;
  std::uint64_t seed = 0;

  bool operator==(const SplitBundle&) const = default;
};

/// LOO: last target per user -> test, second to last -> valid, rest -> train.
/// Temporal811: seeded shuffle of all samples, then an 8:1:1 partition.
SplitBundle split(const std::vector<SequenceSample>& samples, SplitKind kind, std::uint64_t seed);

struct DatasetStats {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t actions = 0;
  double avg_length = 0.0;
  double sparsity = 0.0;  // 1 - actions / (users * items)
};

DatasetStats compute_stats(const Timelines& timelines, const Vocab& vocab);
nlohmann::json stats_to_json(const DatasetStats& s);

/// Everything `prepare` produces, serializable for reproducible reruns.
struct PreparedData {
  Vocab vocab;
  Timelines timelines;
  SplitBundle bundle;
  DatasetStats stats;
  int max_len = 0;
  int min_count = 0;
};

PreparedData prepare(const std::vector<RawEvent>& events, int min_count, int max_len,
                     SplitKind kind, std::uint64_t seed);

void save_snapshot(const PreparedData& data, const std::filesystem::path& path);
PreparedData load_snapshot(const std::filesystem::path& path);

}  // namespace pasrec::data
