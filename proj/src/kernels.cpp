#include "pasrec/kernels.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pasrec::kernels {

namespace {

void check_shape(const Matrix& q, const Matrix& k, const Matrix& v,
                 std::span<const std::uint8_t> mask, const AttentionShape& s) {
  const Eigen::Index rows = static_cast<Eigen::Index>(s.batch) * s.len;
  if (s.heads <= 0 || s.dim % s.heads != 0) {
    throw std::invalid_argument("attention: head count must divide the model width");
  }
  if (q.rows() != rows || k.rows() != rows || v.rows() != rows || q.cols() != s.dim ||
      k.cols() != s.dim || v.cols() != s.dim) {
    throw std::invalid_argument("attention: q/k/v shape mismatch");
  }
  if (static_cast<Eigen::Index>(mask.size()) != rows) {
    throw std::invalid_argument("attention: mask length mismatch");
  }
  for (int b = 0; b < s.batch; ++b) {
    bool any = false;
    for (int j = 0; j < s.len; ++j) any = any || mask[static_cast<size_t>(b * s.len + j)];
    if (!any) throw std::invalid_argument("attention: sample with no real tokens");
  }
}

size_t prob_index(const AttentionShape& s, int b, int h, int i, int j) {
  return ((static_cast<size_t>(b) * s.heads + h) * s.len + i) * s.len + j;
}

// One (sample, head) block with Eigen; shared by the parallel forward.
void attention_block_forward(const Matrix& q, const Matrix& k, const Matrix& v,
                             std::span<const std::uint8_t> mask, const AttentionShape& s, int b,
                             int h, Matrix& out, AttentionProbs& probs) {
  const int dh = s.dim / s.heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  const Eigen::Index r0 = static_cast<Eigen::Index>(b) * s.len;
  const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
  Matrix logits = q.block(r0, c0, s.len, dh) * k.block(r0, c0, s.len, dh).transpose() * inv;
  for (int j = 0; j < s.len; ++j) {
    if (!mask[static_cast<size_t>(r0 + j)]) logits.col(j).setConstant(-std::numeric_limits<double>::infinity());
  }
  for (int i = 0; i < s.len; ++i) {
    const double mx = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - mx).exp();
    // Eigen's vectorized exp clamps -inf to a subnormal rather than 0.
    for (int j = 0; j < s.len; ++j) {
      if (!mask[static_cast<size_t>(r0 + j)]) logits(i, j) = 0.0;
    }
    logits.row(i) /= logits.row(i).sum();
  }
  out.block(r0, c0, s.len, dh) = logits * v.block(r0, c0, s.len, dh);
  for (int i = 0; i < s.len; ++i) {
    for (int j = 0; j < s.len; ++j) probs[prob_index(s, b, h, i, j)] = logits(i, j);
  }
}

void attention_block_backward(const Matrix& grad_out, const Matrix& q, const Matrix& k,
                              const Matrix& v, const AttentionProbs& probs,
                              const AttentionShape& s, int b, int h, Matrix& dq, Matrix& dk,
                              Matrix& dv) {
  const int dh = s.dim / s.heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  const Eigen::Index r0 = static_cast<Eigen::Index>(b) * s.len;
  const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
  Matrix p(s.len, s.len);
  for (int i = 0; i < s.len; ++i) {
    for (int j = 0; j < s.len; ++j) p(i, j) = probs[prob_index(s, b, h, i, j)];
  }
  const auto go = grad_out.block(r0, c0, s.len, dh);
  dv.block(r0, c0, s.len, dh) = p.transpose() * go;
  Matrix dp = go * v.block(r0, c0, s.len, dh).transpose();
  Matrix ds(s.len, s.len);
  for (int i = 0; i < s.len; ++i) {
    const double rowdot = dp.row(i).dot(p.row(i));
    ds.row(i) = p.row(i).array() * (dp.row(i).array() - rowdot);
  }
  dq.block(r0, c0, s.len, dh) = ds * k.block(r0, c0, s.len, dh) * inv;
  dk.block(r0, c0, s.len, dh) = ds.transpose() * q.block(r0, c0, s.len, dh) * inv;
}

}  // namespace

void attention_forward_serial(const Matrix& q, const Matrix& k, const Matrix& v,
                              std::span<const std::uint8_t> mask, const AttentionShape& s,
                              Matrix& out, AttentionProbs& probs) {
  check_shape(q, k, v, mask, s);
  const int dh = s.dim / s.heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  out.setZero(q.rows(), q.cols());
  probs.assign(static_cast<size_t>(s.batch) * s.heads * s.len * s.len, 0.0);
  std::vector<double> logit(static_cast<size_t>(s.len));
  for (int b = 0; b < s.batch; ++b) {
    for (int h = 0; h < s.heads; ++h) {
      for (int i = 0; i < s.len; ++i) {
        const int qi = b * s.len + i;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < s.len; ++j) {
          const int kj = b * s.len + j;
          if (!mask[static_cast<size_t>(kj)]) {
            logit[static_cast<size_t>(j)] = -std::numeric_limits<double>::infinity();
            continue;
          }
          double dot = 0.0;
          for (int c = 0; c < dh; ++c) dot += q(qi, h * dh + c) * k(kj, h * dh + c);
          logit[static_cast<size_t>(j)] = dot * inv;
          mx = std::max(mx, logit[static_cast<size_t>(j)]);
        }
        double z = 0.0;
        for (int j = 0; j < s.len; ++j) {
          const double e = std::exp(logit[static_cast<size_t>(j)] - mx);
          probs[prob_index(s, b, h, i, j)] = e;
          z += e;
        }
        for (int j = 0; j < s.len; ++j) probs[prob_index(s, b, h, i, j)] /= z;
        for (int c = 0; c < dh; ++c) {
          double acc = 0.0;
          for (int j = 0; j < s.len; ++j) acc += probs[prob_index(s, b, h, i, j)] * v(b * s.len + j, h * dh + c);
          out(qi, h * dh + c) = acc;
        }
      }
    }
  }
}

void attention_forward_parallel(const Matrix& q, const Matrix& k, const Matrix& v,
                                std::span<const std::uint8_t> mask, const AttentionShape& s,
                                Matrix& out, AttentionProbs& probs) {
  check_shape(q, k, v, mask, s);
  out.setZero(q.rows(), q.cols());
  probs.assign(static_cast<size_t>(s.batch) * s.heads * s.len * s.len, 0.0);
  const int blocks = s.batch * s.heads;
#pragma omp parallel for schedule(static)
  for (int blk = 0; blk < blocks; ++blk) {
    attention_block_forward(q, k, v, mask, s, blk / s.heads, blk % s.heads, out, probs);
  }
}

void attention_backward_serial(const Matrix& grad_out, const Matrix& q, const Matrix& k,
                               const Matrix& v, const AttentionProbs& probs,
                               const AttentionShape& s, Matrix& dq, Matrix& dk, Matrix& dv) {
  const int dh = s.dim / s.heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  dq.setZero(q.rows(), q.cols());
  dk.setZero(k.rows(), k.cols());
  dv.setZero(v.rows(), v.cols());
  std::vector<double> dp(static_cast<size_t>(s.len));
  for (int b = 0; b < s.batch; ++b) {
    for (int h = 0; h < s.heads; ++h) {
      for (int i = 0; i < s.len; ++i) {
        const int qi = b * s.len + i;
        double rowdot = 0.0;
        for (int j = 0; j < s.len; ++j) {
          double acc = 0.0;
          for (int c = 0; c < dh; ++c) acc += grad_out(qi, h * dh + c) * v(b * s.len + j, h * dh + c);
          dp[static_cast<size_t>(j)] = acc;
          rowdot += acc * probs[prob_index(s, b, h, i, j)];
        }
        for (int j = 0; j < s.len; ++j) {
          const int kj = b * s.len + j;
          const double p = probs[prob_index(s, b, h, i, j)];
          const double ds = p * (dp[static_cast<size_t>(j)] - rowdot);
          for (int c = 0; c < dh; ++c) {
            dv(kj, h * dh + c) += p * grad_out(qi, h * dh + c);
            dq(qi, h * dh + c) += ds * k(kj, h * dh + c) * inv;
            dk(kj, h * dh + c) += ds * q(qi, h * dh + c) * inv;
          }
        }
      }
    }
  }
}

void attention_backward_parallel(const Matrix& grad_out, const Matrix& q, const Matrix& k,
                                 const Matrix& v, const AttentionProbs& probs,
                                 const AttentionShape& s, Matrix& dq, Matrix& dk, Matrix& dv) {
  dq.setZero(q.rows(), q.cols());
  dk.setZero(k.rows(), k.cols());
  dv.setZero(v.rows(), v.cols());
  const int blocks = s.batch * s.heads;
#pragma omp parallel for schedule(static)
  for (int blk = 0; blk < blocks; ++blk) {
    attention_block_backward(grad_out, q, k, v, probs, s, blk / s.heads, blk % s.heads, dq, dk, dv);
  }
}

ad::Var masked_attention(ad::Var q, ad::Var k, ad::Var v, std::span<const std::uint8_t> mask,
                         const AttentionShape& shape, Exec exec, AttentionProbs* probs_out) {
  ad::Tape* t = q.tape();
  Matrix out;
  AttentionProbs probs;
  if (exec == Exec::Serial) {
    attention_forward_serial(q.value(), k.value(), v.value(), mask, shape, out, probs);
  } else {
    attention_forward_parallel(q.value(), k.value(), v.value(), mask, shape, out, probs);
  }
  if (probs_out) *probs_out = probs;
  return t->emit(std::move(out), {q, k, v},
                 [t, q, k, v, shape, exec, probs = std::move(probs)](const Matrix& g) {
                   Matrix dq, dk, dv;
                   if (exec == Exec::Serial) {
                     attention_backward_serial(g, q.value(), k.value(), v.value(), probs, shape, dq, dk, dv);
                   } else {
                     attention_backward_parallel(g, q.value(), k.value(), v.value(), probs, shape, dq, dk, dv);
                   }
                   t->accumulate(q, dq);
                   t->accumulate(k, dk);
                   t->accumulate(v, dv);
                 });
}

void score_serial(const Matrix& queries, const Matrix& table, bool cosine, Matrix& scores) {
  if (queries.cols() != table.cols()) throw std::invalid_argument("score: width mismatch");
  scores.resize(queries.rows(), table.rows());
  for (Eigen::Index i = 0; i < queries.rows(); ++i) {
    double qn = 0.0;
    for (Eigen::Index c = 0; c < queries.cols(); ++c) qn += queries(i, c) * queries(i, c);
    qn = std::sqrt(qn);
    for (Eigen::Index j = 0; j < table.rows(); ++j) {
      double dot = 0.0;
      double tn = 0.0;
      for (Eigen::Index c = 0; c < table.cols(); ++c) {
        dot += queries(i, c) * table(j, c);
        tn += table(j, c) * table(j, c);
      }
      if (cosine) {
        tn = std::sqrt(tn);
        dot = (qn > 0.0 && tn > 0.0) ? dot / (qn * tn) : 0.0;
      }
      scores(i, j) = dot;
    }
  }
}

void score_parallel(const Matrix& queries, const Matrix& table, bool cosine, Matrix& scores) {
  if (queries.cols() != table.cols()) throw std::invalid_argument("score: width mismatch");
  scores.resize(queries.rows(), table.rows());
  Vector tnorm;
  if (cosine) tnorm = table.rowwise().norm();
  const Eigen::Index n = queries.rows();
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) {
    scores.row(i).noalias() = queries.row(i) * table.transpose();
    if (cosine) {
      const double qn = queries.row(i).norm();
      for (Eigen::Index j = 0; j < table.rows(); ++j) {
        scores(i, j) = (qn > 0.0 && tnorm[j] > 0.0) ? scores(i, j) / (qn * tnorm[j]) : 0.0;
      }
    }
  }
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace pasrec::kernels
