#include "pasrec/objectives.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace pasrec::objectives {

namespace {

constexpr double kZeroNorm = 1e-12;

}  // namespace

LossBreakdown combine(double l_normal, double l_bpr, double l_toi, double lambda, double eta) {
  LossBreakdown b;
  b.l_normal = l_normal;
  b.l_bpr = l_bpr;
  b.l_toi = l_toi;
  b.l_ioi = lambda * l_normal + (1.0 - lambda) * l_bpr;
  b.l_total = eta * b.l_ioi + (1.0 - eta) * l_toi;
  return b;
}

double loss_normal(const RowVector& e0_hat, const RowVector& e0) {
  if (e0_hat.size() != e0.size()) throw std::invalid_argument("loss_normal: dimension mismatch");
  return (e0_hat - e0).squaredNorm();
}

ad::Var loss_normal(ad::Var e0_hat, ad::Var e0) { return ad::mean_all(ad::row_sq_dist(e0_hat, e0)); }

std::vector<int> sample_negatives(int batch, int positive, int k, std::mt19937_64& rng) {
  if (positive < 0 || positive >= batch) throw std::out_of_range("sample_negatives: positive outside batch");
  std::vector<int> pool;
  pool.reserve(static_cast<size_t>(batch - 1));
  for (int i = 0; i < batch; ++i) {
    if (i != positive) pool.push_back(i);
  }
  const int take = std::min(k, batch - 1);
  for (int i = 0; i < take; ++i) {
    std::uniform_int_distribution<int> pick(i, static_cast<int>(pool.size()) - 1);
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(pick(rng))]);
  }
  pool.resize(static_cast<size_t>(take));
  return pool;
}

RowVector negative_centroid(const Matrix& batch_targets, int positive, int k, std::mt19937_64& rng) {
  const auto idx = sample_negatives(static_cast<int>(batch_targets.rows()), positive, k, rng);
  RowVector c = RowVector::Zero(batch_targets.cols());
  if (idx.empty()) return c;
  for (int i : idx) c += batch_targets.row(i);
  return c / static_cast<double>(idx.size());
}

Matrix negative_mix_matrix(int batch, int k, std::mt19937_64& rng, int* clamped) {
  Matrix mix = Matrix::Zero(batch, batch);
  for (int i = 0; i < batch; ++i) {
    const auto idx = sample_negatives(batch, i, k, rng);
    if (static_cast<int>(idx.size()) < k && clamped) ++*clamped;
    for (int j : idx) mix(i, j) = 1.0 / static_cast<double>(idx.size());
  }
  return mix;
}

double loss_bpr(const RowVector& pos_hat, const RowVector& pos, const RowVector& neg_hat,
                const RowVector& neg, int k, BprSignMode mode, int* degenerate) {
  ad::Tape tape(false);
  return loss_bpr(tape.constant(pos_hat), tape.constant(pos), tape.constant(neg_hat), tape.constant(neg), k, mode,
                  degenerate)
      .value()(0, 0);
}

ad::Var loss_bpr(ad::Var pos_hat, ad::Var pos, ad::Var neg_hat, ad::Var neg, int k, BprSignMode mode,
                 int* degenerate) {
  if (k < 1) throw std::invalid_argument("loss_bpr: k must be >= 1");
  const Eigen::Index n = pos.rows();
  Vector keep = Vector::Ones(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool bad = pos_hat.value().row(i).norm() <= kZeroNorm || pos.value().row(i).norm() <= kZeroNorm ||
                     neg_hat.value().row(i).norm() <= kZeroNorm || neg.value().row(i).norm() <= kZeroNorm;
    if (bad) {
      keep[i] = 0.0;
      if (degenerate) ++*degenerate;
    }
  }
  const double sign = mode == BprSignMode::Intended ? 1.0 : -1.0;
  ad::Var margin = ad::lincomb(ad::row_cosine(pos_hat, pos), sign * k, ad::row_cosine(neg_hat, neg), -sign * k);
  ad::Var per_row = ad::scale_rows(ad::log_sigmoid(margin), keep);
  return ad::scale(ad::mean_all(per_row), -1.0);
}

}  // namespace pasrec::objectives
