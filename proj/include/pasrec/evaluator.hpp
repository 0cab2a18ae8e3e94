#pragma once

// Full-catalog ranking, H@K / N@K, and the ToI cosine distribution.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pasrec/config.hpp"
#include "pasrec/datastore.hpp"
#include "pasrec/model.hpp"

namespace pasrec::eval {

int hit_at_k(int rank, int k);
double ndcg_at_k(int rank, int k);

/// Item indices (1-based) by descending similarity, ties by ascending index.
/// Padding and the `exclude` indices are left out.
std::vector<int> rank_items(const RowVector& query, const Matrix& table, const std::vector<int>& exclude = {},
                            bool cosine = false);

/// 1-based rank of `target` given scores over items 1..V (column j is item
/// j + 1). Items flagged in `excluded` (indexed by item) are skipped; the
/// target itself always competes.
int target_rank(const RowVector& scores, int target, const std::vector<std::uint8_t>* excluded = nullptr);

struct MetricsReport {
  std::vector<int> ks;
  std::map<int, double> hr;
  std::map<int, double> ndcg;
  std::vector<int> ranks;
  std::vector<double> toi_cosine;  // empty when the ToI path is off
  size_t sample_count = 0;

  /// "H@10", "N@5", ...
  double metric(const std::string& name) const;
};

MetricsReport report_from_ranks(const std::vector<int>& ranks, const std::vector<int>& ks);

/// Seed of the initial noise for sample `index`.
std::uint64_t noise_seed(std::uint64_t base, std::uint64_t index);

/// Chunks of cfg.batch_size samples, spread over cfg.threads workers. The
/// result does not depend on the thread count.
MetricsReport evaluate(const PASRec& model, const std::vector<data::SequenceSample>& samples, const EvalConfig& cfg);

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<size_t> counts;
};

/// Equal-width bins over [lo, hi]; values at hi land in the last bin, values outside are clamped.
Histogram histogram(const std::vector<double>& values, int bins = 20, double lo = -1.0, double hi = 1.0);
std::string histogram_csv(const Histogram& h);

double median(std::vector<double> values);

nlohmann::json to_json(const MetricsReport& r);

}  // namespace pasrec::eval
