#include "pasrec/sequence_encoder.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace pasrec::encoder {

namespace {

std::string layer_key(int l, const char* suffix) { return "encoder." + std::to_string(l) + "." + suffix; }

}  // namespace

void add_parameters(ParameterStore& store, Initializer& init, const ModelConfig& cfg, int item_count) {
  const int d = cfg.dim;
  const double emb_bound = 1.0 / std::sqrt(static_cast<double>(d));
  store.add("item_embedding", "item_embedding", init.uniform(item_count + 1, d, emb_bound));
  if (cfg.time_encoder.kind == TimeEncoderKind::AbsolutePosition) {
    store.add("position_embedding", "position_embedding", init.uniform(cfg.max_len, d, emb_bound));
  }
  const int hidden = cfg.encoder.ff_mult * d;
  const double proj_bound = 1.0 / std::sqrt(static_cast<double>(d));
  const double ff2_bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (int l = 0; l < cfg.encoder.layers; ++l) {
    store.add(layer_key(l, "ln1.gain"), "encoder", Initializer::ones(1, d));
    store.add(layer_key(l, "ln1.bias"), "encoder", Initializer::zeros(1, d));
    for (const char* p : {"wq", "wk", "wv", "wo"}) {
      store.add(layer_key(l, (std::string("attn.") + p).c_str()), "encoder", init.uniform(d, d, proj_bound));
      std::string b = std::string("attn.b") + p[1];
      store.add(layer_key(l, b.c_str()), "encoder", Initializer::zeros(1, d));
    }
    store.add(layer_key(l, "ln2.gain"), "encoder", Initializer::ones(1, d));
    store.add(layer_key(l, "ln2.bias"), "encoder", Initializer::zeros(1, d));
    store.add(layer_key(l, "ffn.w1"), "encoder", init.uniform(d, hidden, proj_bound));
    store.add(layer_key(l, "ffn.b1"), "encoder", Initializer::zeros(1, hidden));
    store.add(layer_key(l, "ffn.w2"), "encoder", init.uniform(hidden, d, ff2_bound));
    store.add(layer_key(l, "ffn.b2"), "encoder", Initializer::zeros(1, d));
  }
  store.add("encoder.final.gain", "encoder", Initializer::ones(1, d));
  store.add("encoder.final.bias", "encoder", Initializer::zeros(1, d));
}

ad::Var lookup(const Binding& params, std::span<const int> indices) {
  const auto rows = params.store().value("item_embedding").rows();
  for (int i : indices) {
    if (i < 0 || i >= rows) throw std::out_of_range("item index " + std::to_string(i) + " outside the embedding table");
  }
  return params.gather("item_embedding", indices);
}

ad::Var encode(const Binding& params, ad::Var fused, std::span<const std::uint8_t> mask, int batch,
               int len, const EncoderConfig& cfg, const EncodeOptions& options) {
  const int d = static_cast<int>(fused.cols());
  if (fused.rows() != static_cast<Eigen::Index>(batch) * len || mask.size() != static_cast<size_t>(fused.rows())) {
    throw std::invalid_argument("encode: fused sequence shape does not match batch x len");
  }
  std::vector<int> readout(static_cast<size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    int last = -1;
    for (int i = 0; i < len; ++i) {
      if (mask[static_cast<size_t>(b * len + i)]) last = i;
    }
    if (last < 0) throw std::invalid_argument("encode: all-padding sequence");
    readout[static_cast<size_t>(b)] = b * len + last;
  }
  if (options.dropout && options.dropout->size() != static_cast<size_t>(2 * cfg.layers)) {
    throw std::invalid_argument("encode: expected two dropout masks per layer");
  }
  ad::Tape& tape = params.tape();
  const kernels::AttentionShape shape{batch, len, cfg.heads, d};
  ad::Var h = fused;
  for (int l = 0; l < cfg.layers; ++l) {
    auto p = [&](const char* s) { return params[layer_key(l, s)]; };
    ad::Var a = ad::layer_norm(h, p("ln1.gain"), p("ln1.bias"));
    ad::Var q = ad::linear(a, p("attn.wq"), p("attn.bq"));
    ad::Var k = ad::linear(a, p("attn.wk"), p("attn.bk"));
    ad::Var v = ad::linear(a, p("attn.wv"), p("attn.bv"));
    kernels::AttentionProbs* probs = nullptr;
    if (options.attention) {
      options.attention->resize(static_cast<size_t>(cfg.layers));
      probs = &(*options.attention)[static_cast<size_t>(l)];
    }
    ad::Var att = kernels::masked_attention(q, k, v, mask, shape, options.exec, probs);
    ad::Var o = ad::linear(att, p("attn.wo"), p("attn.bo"));
    if (options.dropout) o = ad::hadamard(o, tape.constant((*options.dropout)[static_cast<size_t>(2 * l)]));
    h = ad::add(h, o);
    ad::Var f = ad::layer_norm(h, p("ln2.gain"), p("ln2.bias"));
    f = ad::linear(ad::gelu(ad::linear(f, p("ffn.w1"), p("ffn.b1"))), p("ffn.w2"), p("ffn.b2"));
    if (options.dropout) f = ad::hadamard(f, tape.constant((*options.dropout)[static_cast<size_t>(2 * l + 1)]));
    h = ad::add(h, f);
  }
  ad::Var last = ad::gather_rows(h, readout);
  return ad::layer_norm(last, params["encoder.final.gain"], params["encoder.final.bias"]);
}

Matrix score_candidates(const Matrix& queries, const Matrix& table, bool cosine, kernels::Exec exec) {
  if (table.rows() < 2) throw std::invalid_argument("score_candidates: empty catalog");
  if (queries.cols() != table.cols()) throw std::invalid_argument("score_candidates: dimension mismatch");
  const Matrix items = table.bottomRows(table.rows() - 1);
  Matrix scores;
  kernels::score(queries, items, cosine, scores, exec);
  return scores;
}

}  // namespace pasrec::encoder
