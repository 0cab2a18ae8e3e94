#pragma once

// AdamW optimization, the epoch loop with early stopping, and the
// finite-difference gradient check.

#include <functional>
#include <map>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "pasrec/config.hpp"
#include "pasrec/datastore.hpp"
#include "pasrec/evaluator.hpp"
#include "pasrec/model.hpp"

namespace pasrec::train {

/// Non-finite loss or parameters. The CLI maps it to exit code 4.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adam moments with bias correction and decoupled weight decay:
/// p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p).
class AdamW {
 public:
  AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void update(ParameterStore& params, const std::vector<Matrix>& grads);
  long steps() const { return step_; }

 private:
  double lr_, weight_decay_, beta1_, beta2_, eps_;
  long step_ = 0;
  std::vector<Matrix> m_, v_;
};

/// Loss value and per-tensor gradients for one batch under fixed draws.
struct Gradients {
  LossOutput loss;
  std::vector<Matrix> grads;  // parallel to params.tensors()
};

Gradients compute_gradients(const PASRec& model, const Batch& batch, const StepDraws& draws,
                            kernels::Exec exec = kernels::Exec::Parallel);

/// One forward/backward pass and optimizer update. Throws NumericError (with
/// the user ids of the batch) when the loss is not finite.
objectives::LossBreakdown train_step(PASRec& model, AdamW& opt, const Batch& batch, const StepDraws& draws,
                                     const TrainConfig& cfg, kernels::Exec exec = kernels::Exec::Parallel);

struct Validation {
  double metric = 0.0;  // the early-stopping criterion, higher is better
  std::map<std::string, double> values;
};

using Validator = std::function<Validation(const PASRec& model, int epoch)>;

/// Validation on `valid` with N@10 as the criterion; also reports H@5/10 and N@5.
Validator metric_validator(const std::vector<data::SequenceSample>& valid, EvalConfig cfg);

struct EpochRecord {
  int epoch = 0;
  objectives::LossBreakdown loss;  // mean over the epoch's batches
  Validation validation;
  double wall_seconds = 0.0;
};

struct FitResult {
  std::vector<EpochRecord> log;
  int validations = 0;
  int best_epoch = 0;
  double best_metric = 0.0;
  bool early_stopped = false;
};

/// Epoch loop over `train` with validation after every epoch. Stops once
/// `patience` validations in a row fail to improve, or after max_epochs; the
/// best-validation parameters are restored into `model`. When `log` is set the
/// delimited training log (header first) is written to it.
FitResult fit(PASRec& model, const std::vector<data::SequenceSample>& train, const TrainConfig& cfg,
              const Validator& validate, std::ostream* log = nullptr);

std::string log_header();
std::string log_line(const EpochRecord& r);

struct GradCheckReport {
  std::map<std::string, double> max_rel_error;  // per parameter group
  std::map<std::string, size_t> checked;
  double max_error() const;
};

/// Central differences with step h against the analytic gradient of the
/// total loss for every scalar parameter. Relative error is
/// |a - n| / max(|a| + |n|, 1e-6).
GradCheckReport grad_check(const PASRec& model, const Batch& batch, const StepDraws& draws, double h = 1e-5);

}  // namespace pasrec::train
