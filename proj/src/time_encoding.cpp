#include "pasrec/time_encoding.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace pasrec {

RowVector encode_sinusoidal(double t, const TimeEncoderConfig& cfg) {
  RowVector out(cfg.dim);
  for (int i = 0; i < cfg.dim / 2; ++i) {
    const double arg = t / std::pow(cfg.freq, 2.0 * i / cfg.dim);
    out[2 * i] = std::sin(arg);
    out[2 * i + 1] = std::cos(arg);
  }
  return out;
}

RowVector encode_gaussian(double t, const TimeEncoderConfig& cfg) {
  RowVector out(cfg.dim);
  const double denom = 2.0 * cfg.sigma * cfg.sigma;
  for (int j = 0; j < cfg.dim; ++j) {
    const double c = static_cast<double>(j) / (cfg.dim - 1);
    out[j] = std::exp(-(t - c) * (t - c) / denom);
  }
  return out;
}

RowVector encode_rff(double t, std::span<const double> freqs) {
  const auto half = static_cast<Eigen::Index>(freqs.size());
  RowVector out(2 * half);
  for (Eigen::Index k = 0; k < half; ++k) {
    const double arg = 2.0 * std::numbers::pi * freqs[static_cast<size_t>(k)] * t;
    out[k] = std::cos(arg);
    out[half + k] = std::sin(arg);
  }
  return out;
}

std::vector<double> sample_rff_frequencies(int dim, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  std::vector<double> freqs(static_cast<size_t>(dim / 2));
  for (auto& b : freqs) b = normal(rng);
  return freqs;
}

TimeEncoder::TimeEncoder(const TimeEncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.kind == TimeEncoderKind::RFF) rff_freqs_ = sample_rff_frequencies(cfg_.dim, cfg_.sigma, cfg_.seed);
}

RowVector TimeEncoder::encode(double t) const {
  switch (cfg_.kind) {
    case TimeEncoderKind::Sinusoidal:
      return encode_sinusoidal(t, cfg_);
    case TimeEncoderKind::GaussianKernel:
      return encode_gaussian(t, cfg_);
    case TimeEncoderKind::RFF:
      return encode_rff(t, rff_freqs_);
    case TimeEncoderKind::AbsolutePosition:
      break;
  }
  return RowVector::Zero(cfg_.dim);
}

void TimeEncoder::encode_into(double t, double* out) const {
  Eigen::Map<RowVector>(out, cfg_.dim) = encode(t);
}

void TimeEncoder::set_rff_frequencies(std::vector<double> freqs) {
  if (cfg_.kind != TimeEncoderKind::RFF) throw std::invalid_argument("RFF frequencies on a non-RFF encoder");
  if (static_cast<int>(freqs.size()) * 2 != cfg_.dim) {
    throw std::invalid_argument("expected " + std::to_string(cfg_.dim / 2) + " RFF frequencies");
  }
  rff_freqs_ = std::move(freqs);
}

Matrix time_embeddings(const TimeEncoder& enc, std::span<const double> times,
                       std::span<const std::uint8_t> mask) {
  if (times.size() != mask.size()) throw std::invalid_argument("times and mask differ in length");
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(times.size()), enc.dim());
  if (!enc.time_aware()) return out;
  for (size_t i = 0; i < times.size(); ++i) {
    if (mask[i]) enc.encode_into(times[i], out.row(static_cast<Eigen::Index>(i)).data());
  }
  return out;
}

Matrix fuse_sequence(const Matrix& item_embeddings, std::span<const double> times,
                     std::span<const std::uint8_t> mask, const TimeEncoder& enc) {
  if (item_embeddings.cols() != enc.dim()) throw std::invalid_argument("fuse_sequence: dimension mismatch");
  if (static_cast<size_t>(item_embeddings.rows()) != times.size()) {
    throw std::invalid_argument("fuse_sequence: length mismatch");
  }
  return item_embeddings + time_embeddings(enc, times, mask);
}

namespace ad {

Var fuse_sequence(Var item_embeddings, std::span<const double> times,
                  std::span<const std::uint8_t> mask, const TimeEncoder& enc) {
  if (item_embeddings.cols() != enc.dim()) throw std::invalid_argument("fuse_sequence: dimension mismatch");
  if (static_cast<size_t>(item_embeddings.rows()) != times.size()) {
    throw std::invalid_argument("fuse_sequence: length mismatch");
  }
  Tape* tape = item_embeddings.tape();
  return add(item_embeddings, tape->constant(time_embeddings(enc, times, mask)));
}

Var fuse_positions(Var item_embeddings, Var positions, std::span<const std::uint8_t> mask, int len) {
  const auto n = static_cast<size_t>(item_embeddings.rows());
  if (len <= 0 || n % static_cast<size_t>(len) != 0 || mask.size() != n) {
    throw std::invalid_argument("fuse_positions: shape mismatch");
  }
  if (positions.rows() < len || positions.cols() != item_embeddings.cols()) {
    throw std::invalid_argument("fuse_positions: position table too small");
  }
  std::vector<int> rows(n);
  Vector keep(static_cast<Eigen::Index>(n));
  for (size_t i = 0; i < n; ++i) {
    rows[i] = len - 1 - static_cast<int>(i % static_cast<size_t>(len));
    keep[static_cast<Eigen::Index>(i)] = mask[i] ? 1.0 : 0.0;
  }
  return add(item_embeddings, scale_rows(gather_rows(positions, rows), keep));
}

}  // namespace ad
}  // namespace pasrec
