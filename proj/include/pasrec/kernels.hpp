#pragma once

// Data-parallel inner loops. Every kernel has a plain serial reference
// implementation (explicit loops, kept for testing) and an OpenMP version
// that the model uses. Both must agree to rounding.

#include <cstdint>
#include <span>
#include <vector>

#include "pasrec/autodiff.hpp"

namespace pasrec::kernels {

enum class Exec { Serial, Parallel };

struct AttentionShape {
  int batch = 0;
  int len = 0;
  int heads = 1;
  int dim = 0;  // model width; head width is dim / heads
};

/// Softmax probabilities saved by the forward pass, laid out
/// [batch][head][query][key].
using AttentionProbs = std::vector<double>;

// q, k, v, out: (batch * len) x dim. mask: batch * len, nonzero for real tokens.
// Masked keys receive -inf logits; every sample needs at least one real token.
void attention_forward_serial(const Matrix& q, const Matrix& k, const Matrix& v,
                              std::span<const std::uint8_t> mask, const AttentionShape& shape,
                              Matrix& out, AttentionProbs& probs);
void attention_forward_parallel(const Matrix& q, const Matrix& k, const Matrix& v,
                                std::span<const std::uint8_t> mask, const AttentionShape& shape,
                                Matrix& out, AttentionProbs& probs);

void attention_backward_serial(const Matrix& grad_out, const Matrix& q, const Matrix& k,
                               const Matrix& v, const AttentionProbs& probs,
                               const AttentionShape& shape, Matrix& dq, Matrix& dk, Matrix& dv);
void attention_backward_parallel(const Matrix& grad_out, const Matrix& q, const Matrix& k,
                                 const Matrix& v, const AttentionProbs& probs,
                                 const AttentionShape& shape, Matrix& dq, Matrix& dk, Matrix& dv);

/// Differentiable masked multi-head scaled dot-product attention.
ad::Var masked_attention(ad::Var q, ad::Var k, ad::Var v, std::span<const std::uint8_t> mask,
                         const AttentionShape& shape, Exec exec = Exec::Parallel,
                         AttentionProbs* probs_out = nullptr);

/// scores(i, j) = <queries.row(i), table.row(j)>, or cosine when `cosine` is set
/// (zero-norm rows score 0).
void score_serial(const Matrix& queries, const Matrix& table, bool cosine, Matrix& scores);
void score_parallel(const Matrix& queries, const Matrix& table, bool cosine, Matrix& scores);

inline void score(const Matrix& queries, const Matrix& table, bool cosine, Matrix& scores,
                  Exec exec) {
  if (exec == Exec::Serial) {
    score_serial(queries, table, cosine, scores);
  } else {
    score_parallel(queries, table, cosine, scores);
  }
}

int max_threads();

}  // namespace pasrec::kernels
