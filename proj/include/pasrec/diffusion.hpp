#pragma once

// Variance schedule, forward noising, the x0-predicting denoiser with
// classifier-free guidance, and the deterministic DDIM sampler.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pasrec/config.hpp"
#include "pasrec/params.hpp"

namespace pasrec::diffusion {

struct Schedule {
  int T = 0;
  // Index t - 1 holds step t.
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  /// alpha_bar at step t, with alpha_bar(0) = 1.
  double alpha_bar_at(int t) const;
};

/// Linear betas from beta_start (t = 1) to beta_end (t = T).
Schedule build_schedule(int T, double beta_start, double beta_end);
Schedule schedule_from_betas(std::vector<double> betas);

struct NoisedTarget {
  RowVector e_t;
  RowVector epsilon;
  int t = 0;
};

NoisedTarget q_sample(const RowVector& e0, int t, const RowVector& epsilon, const Schedule& s);
/// Recovers the noise from (e_t, e0); the inverse of q_sample for fixed t.
RowVector recover_noise(const RowVector& e_t, const RowVector& e0, int t, const Schedule& s);

/// Batched, differentiable in e0; row i uses step t[i] and noise row i.
ad::Var q_sample(ad::Var e0, std::span<const int> t, const Matrix& epsilon, const Schedule& s);

/// Sinusoidal embedding of integer step indices (freq 10000), one row per entry.
Matrix step_embeddings(std::span<const int> t, int dim);

/// denoiser.{w1,b1,w2,b2}: 3d -> hidden_mult*d -> d, and the 1 x d unconditional token denoiser.uncond.
void add_parameters(ParameterStore& store, Initializer& init, const ModelConfig& cfg);

/// e0_hat = p_theta([e_t, step(t), cond]).
ad::Var denoise(const Binding& params, ad::Var e_t, std::span<const int> t, ad::Var cond);

/// (1 + w) * p(cond) - w * p(uncond); w = 0 returns the conditional output itself.
ad::Var guided_denoise(const Binding& params, ad::Var e_t, std::span<const int> t, ad::Var cond, double w);

/// One deterministic step from t to t_prev (t_prev < t, alpha_bar(0) = 1).
Matrix ddim_step(const Matrix& e_t, const Matrix& e0_hat, int t, int t_prev, const Schedule& s);

/// Uniform-stride descending subset of {1..T} with min(steps, T) entries, starting at T.
std::vector<int> ddim_timesteps(int T, int steps);

using X0Predictor = std::function<Matrix(const Matrix& e_t, int t)>;

/// Runs the chain over `timesteps` (descending) from x_T, finishing at step 0.
Matrix ddim_sample(const X0Predictor& predict, Matrix x_T, std::span<const int> timesteps, const Schedule& s);

/// Standard-normal rows, row i drawn from its own seed.
Matrix initial_noise(std::span<const std::uint64_t> seeds, int dim);

/// Guided sampling conditioned on `cond` (rows are samples) with frozen parameters.
Matrix sample(const ParameterStore& params, const Matrix& cond, double w, const Schedule& s,
              std::span<const int> timesteps, Matrix x_T);

}  // namespace pasrec::diffusion
