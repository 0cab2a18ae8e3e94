#pragma once

// Next-interaction time predictor M_phi, fusion of the predicted time
// embedding into the user representation, and the cosine ToI loss.

#include "pasrec/config.hpp"
#include "pasrec/params.hpp"

namespace pasrec::toi {

/// toi.{w1,b1,w2,b2}: 2d -> hidden_mult*d -> d; fusion.{w1,b1,w2,b2} likewise.
void add_parameters(ParameterStore& store, Initializer& init, const ModelConfig& cfg);

/// tau_hat = M_phi([g, tau_prev]); rows are samples.
ad::Var predict_toi(const Binding& params, ad::Var g, ad::Var tau_prev);

/// (1 - gamma) * g + gamma * MLP([g, tau_hat]). gamma = 0 returns g itself and
/// gamma = 1 the network output, without blending arithmetic.
ad::Var fuse(const Binding& params, ad::Var g, ad::Var tau_hat, double gamma);

/// Batch mean of -cos(tau_hat, tau). Rows with a zero-norm side contribute 0
/// and are counted in `degenerate`.
ad::Var toi_loss(ad::Var tau_hat, ad::Var tau, int* degenerate = nullptr);

double toi_loss(const RowVector& tau_hat, const RowVector& tau, int* degenerate = nullptr);

}  // namespace pasrec::toi
