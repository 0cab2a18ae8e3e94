#include "pasrec/diffusion.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace pasrec::diffusion {

double Schedule::alpha_bar_at(int t) const {
  if (t == 0) return 1.0;
  if (t < 0 || t > T) throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [0, T]");
  return alpha_bar[static_cast<size_t>(t - 1)];
}

Schedule schedule_from_betas(std::vector<double> betas) {
  if (betas.empty()) throw ConfigError("diffusion schedule needs T >= 1");
  Schedule s;
  s.T = static_cast<int>(betas.size());
  double prod = 1.0;
  for (double b : betas) {
    if (!(b > 0.0 && b < 1.0)) throw ConfigError("diffusion betas must lie in (0, 1)");
    s.alpha.push_back(1.0 - b);
    prod *= 1.0 - b;
    s.alpha_bar.push_back(prod);
  }
  s.beta = std::move(betas);
  return s;
}

Schedule build_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw ConfigError("diffusion schedule needs T >= 1");
  if (!(beta_start > 0.0) || beta_start > beta_end || !(beta_end < 1.0)) {
    throw ConfigError("diffusion betas must satisfy 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<size_t>(T));
  for (int t = 1; t <= T; ++t) {
    betas[static_cast<size_t>(t - 1)] =
        T == 1 ? beta_start : beta_start + (beta_end - beta_start) * (t - 1) / static_cast<double>(T - 1);
  }
  return schedule_from_betas(std::move(betas));
}

NoisedTarget q_sample(const RowVector& e0, int t, const RowVector& epsilon, const Schedule& s) {
  if (t < 1 || t > s.T) throw std::out_of_range("q_sample step outside [1, T]");
  const double ab = s.alpha_bar_at(t);
  return NoisedTarget{std::sqrt(ab) * e0 + std::sqrt(1.0 - ab) * epsilon, epsilon, t};
}

RowVector recover_noise(const RowVector& e_t, const RowVector& e0, int t, const Schedule& s) {
  const double ab = s.alpha_bar_at(t);
  return (e_t - std::sqrt(ab) * e0) / std::sqrt(1.0 - ab);
}

ad::Var q_sample(ad::Var e0, std::span<const int> t, const Matrix& epsilon, const Schedule& s) {
  const auto n = static_cast<Eigen::Index>(t.size());
  if (e0.rows() != n || epsilon.rows() != n || epsilon.cols() != e0.cols()) {
    throw std::invalid_argument("q_sample: shape mismatch");
  }
  Vector signal(n);
  Matrix noise(epsilon.rows(), epsilon.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const int ti = t[static_cast<size_t>(i)];
    if (ti < 1 || ti > s.T) throw std::out_of_range("q_sample step outside [1, T]");
    const double ab = s.alpha_bar_at(ti);
    signal[i] = std::sqrt(ab);
    noise.row(i) = std::sqrt(1.0 - ab) * epsilon.row(i);
  }
  return ad::add(ad::scale_rows(e0, signal), e0.tape()->constant(std::move(noise)));
}

Matrix step_embeddings(std::span<const int> t, int dim) {
  Matrix out(static_cast<Eigen::Index>(t.size()), dim);
  for (size_t r = 0; r < t.size(); ++r) {
    for (int i = 0; i < dim / 2; ++i) {
      const double arg = t[r] / std::pow(10000.0, 2.0 * i / dim);
      out(static_cast<Eigen::Index>(r), 2 * i) = std::sin(arg);
      out(static_cast<Eigen::Index>(r), 2 * i + 1) = std::cos(arg);
    }
    if (dim % 2 == 1) out(static_cast<Eigen::Index>(r), dim - 1) = std::sin(static_cast<double>(t[r]));
  }
  return out;
}

void add_parameters(ParameterStore& store, Initializer& init, const ModelConfig& cfg) {
  const int d = cfg.dim;
  const int hidden = cfg.diffusion.hidden_mult * d;
  store.add("denoiser.w1", "denoiser", init.uniform(3 * d, hidden, 1.0 / std::sqrt(3.0 * d)));
  store.add("denoiser.b1", "denoiser", Initializer::zeros(1, hidden));
  store.add("denoiser.w2", "denoiser", init.uniform(hidden, d, 1.0 / std::sqrt(static_cast<double>(hidden))));
  store.add("denoiser.b2", "denoiser", Initializer::zeros(1, d));
  store.add("denoiser.uncond", "uncond", init.uniform(1, d, 1.0 / std::sqrt(static_cast<double>(d))));
}

ad::Var denoise(const Binding& params, ad::Var e_t, std::span<const int> t, ad::Var cond) {
  if (static_cast<size_t>(e_t.rows()) != t.size()) throw std::invalid_argument("denoise: step count mismatch");
  ad::Tape& tape = params.tape();
  if (cond.rows() == 1 && e_t.rows() != 1) {
    std::vector<int> rows(static_cast<size_t>(e_t.rows()), 0);
    cond = ad::gather_rows(cond, rows);
  }
  const std::array<ad::Var, 3> parts{e_t, tape.constant(step_embeddings(t, static_cast<int>(e_t.cols()))), cond};
  ad::Var h = ad::gelu(ad::linear(ad::concat_cols(parts), params["denoiser.w1"], params["denoiser.b1"]));
  return ad::linear(h, params["denoiser.w2"], params["denoiser.b2"]);
}

ad::Var guided_denoise(const Binding& params, ad::Var e_t, std::span<const int> t, ad::Var cond, double w) {
  ad::Var conditional = denoise(params, e_t, t, cond);
  if (w == 0.0) return conditional;
  ad::Var unconditional = denoise(params, e_t, t, params["denoiser.uncond"]);
  return ad::lincomb(conditional, 1.0 + w, unconditional, -w);
}

Matrix ddim_step(const Matrix& e_t, const Matrix& e0_hat, int t, int t_prev, const Schedule& s) {
  if (t < 1 || t_prev < 0 || t_prev >= t) throw std::out_of_range("ddim_step needs 0 <= t_prev < t");
  const double ab = s.alpha_bar_at(t);
  const double ab_prev = s.alpha_bar_at(t_prev);
  const Matrix eps_hat = (e_t - std::sqrt(ab) * e0_hat) / std::sqrt(1.0 - ab);
  if (t_prev == 0) return e0_hat;
  return std::sqrt(ab_prev) * e0_hat + std::sqrt(1.0 - ab_prev) * eps_hat;
}

std::vector<int> ddim_timesteps(int T, int steps) {
  if (T < 1 || steps < 1) throw ConfigError("ddim_timesteps needs T >= 1 and steps >= 1");
  const int n = std::min(steps, T);
  std::vector<int> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = n; i >= 1; --i) {
    out.push_back(static_cast<int>((static_cast<long long>(i) * T + n - 1) / n));
  }
  return out;
}

Matrix ddim_sample(const X0Predictor& predict, Matrix x_T, std::span<const int> timesteps, const Schedule& s) {
  Matrix x = std::move(x_T);
  for (size_t i = 0; i < timesteps.size(); ++i) {
    const int t = timesteps[i];
    const int t_prev = i + 1 < timesteps.size() ? timesteps[i + 1] : 0;
    x = ddim_step(x, predict(x, t), t, t_prev, s);
  }
  return x;
}

Matrix initial_noise(std::span<const std::uint64_t> seeds, int dim) {
  Matrix out(static_cast<Eigen::Index>(seeds.size()), dim);
  for (size_t r = 0; r < seeds.size(); ++r) {
    std::mt19937_64 rng(seeds[r]);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int c = 0; c < dim; ++c) out(static_cast<Eigen::Index>(r), c) = normal(rng);
  }
  return out;
}

Matrix sample(const ParameterStore& params, const Matrix& cond, double w, const Schedule& s,
              std::span<const int> timesteps, Matrix x_T) {
  if (x_T.rows() != cond.rows() || x_T.cols() != cond.cols()) throw std::invalid_argument("sample: shape mismatch");
  const auto predict = [&](const Matrix& x, int t) {
    ad::Tape tape(false);
    Binding frozen(params, tape, false);
    const std::vector<int> steps(static_cast<size_t>(x.rows()), t);
    return guided_denoise(frozen, tape.constant(x), steps, tape.constant(cond), w).value();
  };
  return ddim_sample(predict, std::move(x_T), timesteps, s);
}

}  // namespace pasrec::diffusion
