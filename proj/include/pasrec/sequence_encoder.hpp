#pragma once

// Item-embedding lookup, the pre-norm Transformer encoder and catalog scoring.

#include <cstdint>
#include <span>
#include <vector>

#include "pasrec/config.hpp"
#include "pasrec/kernels.hpp"
#include "pasrec/params.hpp"

namespace pasrec::encoder {

/// item_embedding ((V+1) x d, row 0 padding), position_embedding (L x d, only
/// for the absolute-position ablation) and the encoder.* tensors.
void add_parameters(ParameterStore& store, Initializer& init, const ModelConfig& cfg, int item_count);

/// Row gather from item_embedding; index 0 returns the padding row.
ad::Var lookup(const Binding& params, std::span<const int> indices);

struct EncodeOptions {
  kernels::Exec exec = kernels::Exec::Parallel;
  /// 2 * layers inverted-dropout masks ((batch * len) x d), or null.
  const std::vector<Matrix>* dropout = nullptr;
  /// Receives one probability buffer per layer when set.
  std::vector<kernels::AttentionProbs>* attention = nullptr;
};

/// fused: (batch * len) x d. Returns batch x d, the final hidden state at the
/// last real position of every window.
ad::Var encode(const Binding& params, ad::Var fused, std::span<const std::uint8_t> mask, int batch,
               int len, const EncoderConfig& cfg, const EncodeOptions& options = {});

/// scores(b, j) = similarity of query b with item j + 1 (the padding row is skipped).
Matrix score_candidates(const Matrix& queries, const Matrix& table, bool cosine,
                        kernels::Exec exec = kernels::Exec::Parallel);

}  // namespace pasrec::encoder
