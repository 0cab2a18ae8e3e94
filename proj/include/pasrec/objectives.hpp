#pragma once

// Reconstruction loss, negative-centroid BPR loss and their blends.

#include <cstdint>
#include <random>
#include <vector>

#include "pasrec/autodiff.hpp"
#include "pasrec/config.hpp"

namespace pasrec::objectives {

struct LossBreakdown {
  double l_normal = 0.0;
  double l_bpr = 0.0;
  double l_ioi = 0.0;
  double l_toi = 0.0;
  double l_total = 0.0;
};

/// l_ioi = lambda * l_normal + (1 - lambda) * l_bpr; l_total = eta * l_ioi + (1 - eta) * l_toi.
LossBreakdown combine(double l_normal, double l_bpr, double l_toi, double lambda, double eta);

double loss_normal(const RowVector& e0_hat, const RowVector& e0);
/// Batch mean of squared row distances.
ad::Var loss_normal(ad::Var e0_hat, ad::Var e0);

/// k distinct in-batch indices other than `positive`, uniformly drawn by a
/// partial Fisher-Yates shuffle. k is clamped to batch - 1.
std::vector<int> sample_negatives(int batch, int positive, int k, std::mt19937_64& rng);

RowVector negative_centroid(const Matrix& batch_targets, int positive, int k, std::mt19937_64& rng);

/// Row i holds 1/k at the negatives of sample i, so mix * targets stacks every
/// sample's centroid. `clamped` counts rows whose k had to shrink.
Matrix negative_mix_matrix(int batch, int k, std::mt19937_64& rng, int* clamped = nullptr);

/// -log sigmoid(sign * k * [cos(pos_hat, pos) - cos(neg_hat, neg)]), sign = +1
/// for the intent mode and -1 for the verbatim mode.
double loss_bpr(const RowVector& pos_hat, const RowVector& pos, const RowVector& neg_hat,
                const RowVector& neg, int k, BprSignMode mode, int* degenerate = nullptr);

/// Batch mean of the per-row BPR term. Rows where any similarity input has
/// zero norm contribute 0 and are counted in `degenerate`.
ad::Var loss_bpr(ad::Var pos_hat, ad::Var pos, ad::Var neg_hat, ad::Var neg, int k, BprSignMode mode,
                 int* degenerate = nullptr);

}  // namespace pasrec::objectives
