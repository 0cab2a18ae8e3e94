#include "pasrec/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <omp.h>

namespace pasrec::eval {

using nlohmann::json;

int hit_at_k(int rank, int k) {
  if (rank < 1) throw std::invalid_argument("rank must be >= 1");
  return rank <= k ? 1 : 0;
}

double ndcg_at_k(int rank, int k) {
  if (rank < 1) throw std::invalid_argument("rank must be >= 1");
  return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

std::vector<int> rank_items(const RowVector& query, const Matrix& table, const std::vector<int>& exclude,
                            bool cosine) {
  const Matrix scores = encoder::score_candidates(query, table, cosine, kernels::Exec::Serial);
  std::vector<std::uint8_t> skip(static_cast<size_t>(table.rows()), 0);
  for (int e : exclude) {
    if (e > 0 && e < table.rows()) skip[static_cast<size_t>(e)] = 1;
  }
  std::vector<int> order;
  for (int i = 1; i < table.rows(); ++i) {
    if (!skip[static_cast<size_t>(i)]) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores(0, a - 1) > scores(0, b - 1); });
  return order;
}

int target_rank(const RowVector& scores, int target, const std::vector<std::uint8_t>* excluded) {
  if (target < 1 || target > scores.size()) throw std::out_of_range("target item outside the catalog");
  const double s = scores[target - 1];
  int rank = 1;
  for (Eigen::Index j = 0; j < scores.size(); ++j) {
    const int item = static_cast<int>(j) + 1;
    if (item == target) continue;
    if (excluded && (*excluded)[static_cast<size_t>(item)]) continue;
    if (scores[j] > s || (scores[j] == s && item < target)) ++rank;
  }
  return rank;
}

double MetricsReport::metric(const std::string& name) const {
  if (name.size() < 3 || name[1] != '@') throw std::invalid_argument("metric names look like H@10 or N@5");
  const int k = std::stoi(name.substr(2));
  const auto& table = name[0] == 'H' ? hr : ndcg;
  auto it = table.find(k);
  if ((name[0] != 'H' && name[0] != 'N') || it == table.end()) throw std::invalid_argument("unknown metric " + name);
  return it->second;
}

MetricsReport report_from_ranks(const std::vector<int>& ranks, const std::vector<int>& ks) {
  MetricsReport r;
  r.ks = ks;
  r.ranks = ranks;
  r.sample_count = ranks.size();
  for (int k : ks) {
    double h = 0.0;
    double n = 0.0;
    for (int rank : ranks) {
      h += hit_at_k(rank, k);
      n += ndcg_at_k(rank, k);
    }
    const double denom = ranks.empty() ? 1.0 : static_cast<double>(ranks.size());
    r.hr[k] = h / denom;
    r.ndcg[k] = n / denom;
  }
  return r;
}

std::uint64_t noise_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

MetricsReport evaluate(const PASRec& model, const std::vector<data::SequenceSample>& samples, const EvalConfig& cfg) {
  if (cfg.batch_size < 1 || cfg.threads < 1) throw ConfigError("eval batch size and threads must be positive");
  const size_t n = samples.size();
  const size_t chunk = static_cast<size_t>(cfg.batch_size);
  const auto chunks = static_cast<long long>((n + chunk - 1) / chunk);
  std::vector<int> ranks(n, 0);
  std::vector<double> cosines(n, 0.0);
  const bool with_toi = model.toi_enabled();
  const Matrix& table = model.params().value("item_embedding");
  const Matrix items = table.bottomRows(table.rows() - 1);
  std::exception_ptr failure;

#pragma omp parallel for schedule(dynamic) num_threads(cfg.threads)
  for (long long c = 0; c < chunks; ++c) {
    try {
      const size_t begin = static_cast<size_t>(c) * chunk;
      const size_t end = std::min(n, begin + chunk);
      std::vector<size_t> idx(end - begin);
      std::iota(idx.begin(), idx.end(), begin);
      const Batch batch = make_batch(samples, idx);
      std::vector<std::uint64_t> seeds(idx.size());
      for (size_t i = 0; i < idx.size(); ++i) seeds[i] = noise_seed(cfg.seed, idx[i]);
      const Prediction p = predict(model, batch, seeds, kernels::Exec::Parallel);
      Matrix scores;
      kernels::score_parallel(p.e0_hat, items, cfg.cosine, scores);
      std::vector<std::uint8_t> excluded;
      for (size_t i = 0; i < idx.size(); ++i) {
        const auto& s = samples[idx[i]];
        const std::vector<std::uint8_t>* ex = nullptr;
        if (cfg.exclude_history) {
          excluded.assign(static_cast<size_t>(table.rows()), 0);
          for (size_t j = 0; j < s.history_items.size(); ++j) {
            if (s.history_mask[j]) excluded[static_cast<size_t>(s.history_items[j])] = 1;
          }
          ex = &excluded;
        }
        ranks[idx[i]] = target_rank(scores.row(static_cast<Eigen::Index>(i)), s.target_item, ex);
        if (with_toi) {
          const auto a = p.tau_hat.row(static_cast<Eigen::Index>(i));
          const auto b = p.tau.row(static_cast<Eigen::Index>(i));
          const double na = a.norm();
          const double nb = b.norm();
          cosines[idx[i]] = na > 1e-12 && nb > 1e-12 ? a.dot(b) / (na * nb) : 0.0;
        }
      }
    } catch (...) {
#pragma omp critical(pasrec_eval_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  MetricsReport r = report_from_ranks(ranks, cfg.ks);
  if (with_toi) r.toi_cosine = std::move(cosines);
  return r;
}

Histogram histogram(const std::vector<double>& values, int bins, double lo, double hi) {
  if (bins < 1 || !(hi > lo)) throw std::invalid_argument("histogram needs bins >= 1 and hi > lo");
  Histogram h;
  for (int i = 0; i <= bins; ++i) h.edges.push_back(lo + (hi - lo) * i / bins);
  h.counts.assign(static_cast<size_t>(bins), 0);
  for (double v : values) {
    int b = static_cast<int>(std::floor((v - lo) / (hi - lo) * bins));
    b = std::clamp(b, 0, bins - 1);
    ++h.counts[static_cast<size_t>(b)];
  }
  return h;
}

std::string histogram_csv(const Histogram& h) {
  std::ostringstream out;
  out.precision(17);
  out << "bin_lo,bin_hi,count\n";
  for (size_t i = 0; i < h.counts.size(); ++i) out << h.edges[i] << ',' << h.edges[i + 1] << ',' << h.counts[i] << '\n';
  return out.str();
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty list");
  const size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

json to_json(const MetricsReport& r) {
  json j;
  j["sample_count"] = r.sample_count;
  for (int k : r.ks) {
    j["H@" + std::to_string(k)] = r.hr.at(k);
    j["N@" + std::to_string(k)] = r.ndcg.at(k);
  }
  if (!r.toi_cosine.empty()) {
    j["toi_cosine_median"] = median(r.toi_cosine);
    j["toi_cosine_mean"] =
        std::accumulate(r.toi_cosine.begin(), r.toi_cosine.end(), 0.0) / static_cast<double>(r.toi_cosine.size());
    j["toi_cosine"] = r.toi_cosine;
  }
  return j;
}

}  // namespace pasrec::eval
