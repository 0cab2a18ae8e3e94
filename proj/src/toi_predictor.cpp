#include "pasrec/toi_predictor.hpp"

#include <array>
#include <cmath>

namespace pasrec::toi {

namespace {

void add_mlp(ParameterStore& store, Initializer& init, const std::string& prefix, const std::string& group,
             int in, int hidden, int out) {
  store.add(prefix + ".w1", group, init.uniform(in, hidden, 1.0 / std::sqrt(static_cast<double>(in))));
  store.add(prefix + ".b1", group, Initializer::zeros(1, hidden));
  store.add(prefix + ".w2", group, init.uniform(hidden, out, 1.0 / std::sqrt(static_cast<double>(hidden))));
  store.add(prefix + ".b2", group, Initializer::zeros(1, out));
}

ad::Var mlp(const Binding& params, const std::string& prefix, ad::Var a, ad::Var b) {
  const std::array<ad::Var, 2> parts{a, b};
  ad::Var h = ad::gelu(ad::linear(ad::concat_cols(parts), params[prefix + ".w1"], params[prefix + ".b1"]));
  return ad::linear(h, params[prefix + ".w2"], params[prefix + ".b2"]);
}

}  // namespace

void add_parameters(ParameterStore& store, Initializer& init, const ModelConfig& cfg) {
  const int d = cfg.dim;
  const int hidden = cfg.toi.hidden_mult * d;
  add_mlp(store, init, "toi", "toi", 2 * d, hidden, d);
  add_mlp(store, init, "fusion", "fusion", 2 * d, hidden, d);
}

ad::Var predict_toi(const Binding& params, ad::Var g, ad::Var tau_prev) { return mlp(params, "toi", g, tau_prev); }

ad::Var fuse(const Binding& params, ad::Var g, ad::Var tau_hat, double gamma) {
  if (gamma == 0.0) return g;
  ad::Var m = mlp(params, "fusion", g, tau_hat);
  if (gamma == 1.0) return m;
  return ad::lincomb(g, 1.0 - gamma, m, gamma);
}

ad::Var toi_loss(ad::Var tau_hat, ad::Var tau, int* degenerate) {
  return ad::scale(ad::mean_all(ad::row_cosine(tau_hat, tau, degenerate)), -1.0);
}

double toi_loss(const RowVector& tau_hat, const RowVector& tau, int* degenerate) {
  ad::Tape tape(false);
  return toi_loss(tape.constant(tau_hat), tape.constant(tau), degenerate).value()(0, 0);
}

}  // namespace pasrec::toi
