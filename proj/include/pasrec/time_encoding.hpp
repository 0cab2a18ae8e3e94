#pragma once

// Scalar time -> d-dimensional embedding, and additive fusion with item embeddings.

#include <cstdint>
#include <span>
#include <vector>

#include "pasrec/autodiff.hpp"
#include "pasrec/config.hpp"

namespace pasrec {

RowVector encode_sinusoidal(double t, const TimeEncoderConfig& cfg);
RowVector encode_gaussian(double t, const TimeEncoderConfig& cfg);
/// `freqs` holds the d/2 frozen frequencies b_k.
RowVector encode_rff(double t, std::span<const double> freqs);

/// b_k ~ N(0, sigma^2) drawn in order from mt19937_64(seed).
std::vector<double> sample_rff_frequencies(int dim, double sigma, std::uint64_t seed);

class TimeEncoder {
 public:
  explicit TimeEncoder(const TimeEncoderConfig& cfg);

  const TimeEncoderConfig& config() const { return cfg_; }
  TimeEncoderKind kind() const { return cfg_.kind; }
  int dim() const { return cfg_.dim; }
  /// False for the absolute-position ablation, which ignores timestamps.
  bool time_aware() const { return cfg_.kind != TimeEncoderKind::AbsolutePosition; }

  RowVector encode(double t) const;
  void encode_into(double t, double* out) const;

  const std::vector<double>& rff_frequencies() const { return rff_freqs_; }
  /// Restores frequencies read from a checkpoint.
  void set_rff_frequencies(std::vector<double> freqs);

 private:
  TimeEncoderConfig cfg_;
  std::vector<double> rff_freqs_;
};

/// Time embeddings for n = times.size() positions; rows where mask is 0 stay zero.
Matrix time_embeddings(const TimeEncoder& enc, std::span<const double> times,
                       std::span<const std::uint8_t> mask);

/// s~[i] = e[i] + TE(t[i]) at real positions; padding rows pass through.
Matrix fuse_sequence(const Matrix& item_embeddings, std::span<const double> times,
                     std::span<const std::uint8_t> mask, const TimeEncoder& enc);

namespace ad {

Var fuse_sequence(Var item_embeddings, std::span<const double> times,
                  std::span<const std::uint8_t> mask, const TimeEncoder& enc);

/// Absolute-position variant: the most recent slot of every window uses row 0
/// of `positions` (L x d), the one before it row 1, and so on. Padding rows pass through.
Var fuse_positions(Var item_embeddings, Var positions, std::span<const std::uint8_t> mask, int len);

}  // namespace ad
}  // namespace pasrec
