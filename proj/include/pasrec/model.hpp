#pragma once

// The assembled recommender: parameters, batched forward pass with the full
// training objective, and guided sampling of next-item embeddings.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "pasrec/config.hpp"
#include "pasrec/datastore.hpp"
#include "pasrec/diffusion.hpp"
#include "pasrec/objectives.hpp"
#include "pasrec/params.hpp"
#include "pasrec/sequence_encoder.hpp"
#include "pasrec/time_encoding.hpp"

namespace pasrec {

/// Flattened samples: items/times/mask are (size * len), row-major by sample.
struct Batch {
  int size = 0;
  int len = 0;
  std::vector<int> items;
  std::vector<double> times;
  std::vector<std::uint8_t> mask;
  std::vector<int> targets;
  std::vector<double> target_times;
  std::vector<double> last_times;  // time of the most recent real event
};

Batch make_batch(const std::vector<data::SequenceSample>& samples, std::span<const size_t> indices);
Batch make_batch(const std::vector<data::SequenceSample>& samples);

/// Every random quantity of one training step, drawn up front so the loss is
/// a deterministic function of the parameters.
struct StepDraws {
  std::vector<int> t;                      // diffusion step per sample, in [1, T]
  Matrix noise;                            // batch x d
  std::vector<std::uint8_t> use_condition;  // 0 -> unconditional token
  Matrix negative_mix;                     // batch x batch centroid weights
  std::vector<Matrix> dropout;             // empty when encoder dropout is 0
  int clamped_negatives = 0;
};

StepDraws draw_step(const ModelConfig& cfg, int batch, int len, std::mt19937_64& rng);

class PASRec {
 public:
  /// Fresh parameters from cfg.init_seed.
  PASRec(ModelConfig cfg, int item_count);
  /// Restores a model; the store must match the shapes a fresh model would have.
  PASRec(ModelConfig cfg, int item_count, ParameterStore params, std::vector<double> rff_frequencies = {});

  const ModelConfig& config() const { return cfg_; }
  int item_count() const { return item_count_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  const TimeEncoder& time_encoder() const { return time_encoder_; }
  const diffusion::Schedule& schedule() const { return schedule_; }
  const std::vector<int>& inference_steps() const { return inference_steps_; }
  bool toi_enabled() const { return cfg_.toi_enabled(); }

  Checkpoint to_checkpoint(nlohmann::json extra_meta = nlohmann::json::object()) const;
  static PASRec from_checkpoint(const Checkpoint& ckpt);

 private:
  ModelConfig cfg_;
  int item_count_;
  ParameterStore params_;
  TimeEncoder time_encoder_;
  diffusion::Schedule schedule_;
  std::vector<int> inference_steps_;
};

struct Representation {
  ad::Var g;        // encoder output
  ad::Var g_prime;  // after ToI fusion (g itself when the ToI path is off)
  ad::Var tau_hat;  // invalid when the ToI path is off
};

Representation represent(const PASRec& model, const Binding& params, const Batch& batch,
                         const encoder::EncodeOptions& options = {});

struct LossOutput {
  ad::Var total;
  objectives::LossBreakdown values;
  int degenerate_toi = 0;
  int degenerate_bpr = 0;
};

/// Training objective. Without the ToI path the total is the IoI loss alone.
LossOutput forward_loss(const PASRec& model, const Binding& params, const Batch& batch, const StepDraws& draws,
                        kernels::Exec exec = kernels::Exec::Parallel);

struct Prediction {
  Matrix e0_hat;   // sampled next-item embeddings
  Matrix g;
  Matrix g_prime;
  Matrix tau_hat;  // empty when the ToI path is off
  Matrix tau;      // encoder applied to the target times
};

/// Inference: represent, then DDIM-sample with guidance from x_T = N(0, I) seeded per row.
Prediction predict(const PASRec& model, const Batch& batch, std::span<const std::uint64_t> noise_seeds,
                   kernels::Exec exec = kernels::Exec::Parallel);

}  // namespace pasrec
