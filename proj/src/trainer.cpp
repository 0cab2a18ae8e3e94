#include "pasrec/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace pasrec::train {

void AdamW::update(ParameterStore& params, const std::vector<Matrix>& grads) {
  auto& tensors = params.tensors();
  if (grads.size() != tensors.size()) throw std::invalid_argument("AdamW: one gradient per tensor expected");
  if (m_.empty()) {
    for (const auto& t : tensors) {
      m_.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
      v_.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
    }
  }
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (size_t i = 0; i < tensors.size(); ++i) {
    Matrix& p = tensors[i].value;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
    const Matrix step = (m_[i] / c1).array() / ((v_[i] / c2).array().sqrt() + eps_);
    p -= lr_ * (step + weight_decay_ * p);
  }
}

Gradients compute_gradients(const PASRec& model, const Batch& batch, const StepDraws& draws, kernels::Exec exec) {
  ad::Tape tape(true);
  Binding params(model.params(), tape, true);
  Gradients g;
  g.loss = forward_loss(model, params, batch, draws, exec);
  tape.backward(g.loss.total);
  g.grads.reserve(model.params().size());
  for (size_t i = 0; i < model.params().size(); ++i) g.grads.push_back(tape.grad(params.leaf(i)));
  return g;
}

objectives::LossBreakdown train_step(PASRec& model, AdamW& opt, const Batch& batch, const StepDraws& draws,
                                     const TrainConfig& cfg, kernels::Exec exec) {
  Gradients g = compute_gradients(model, batch, draws, exec);
  const auto& v = g.loss.values;
  if (!std::isfinite(v.l_total)) {
    std::ostringstream msg;
    msg << "non-finite loss (normal=" << v.l_normal << " bpr=" << v.l_bpr << " toi=" << v.l_toi
        << ") on a batch of " << batch.size << " samples; targets:";
    for (int t : batch.targets) msg << ' ' << t;
    throw NumericError(msg.str());
  }
  if (cfg.grad_clip > 0.0) {
    double sq = 0.0;
    for (const auto& m : g.grads) sq += m.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip) {
      for (auto& m : g.grads) m *= cfg.grad_clip / norm;
    }
  }
  opt.update(model.params(), g.grads);
  return v;
}

Validator metric_validator(const std::vector<data::SequenceSample>& valid, EvalConfig cfg) {
  if (std::find(cfg.ks.begin(), cfg.ks.end(), 10) == cfg.ks.end()) cfg.ks.push_back(10);
  return [&valid, cfg](const PASRec& model, int) {
    const auto report = eval::evaluate(model, valid, cfg);
    Validation v;
    v.metric = report.ndcg.at(10);
    for (int k : report.ks) {
      v.values["H@" + std::to_string(k)] = report.hr.at(k);
      v.values["N@" + std::to_string(k)] = report.ndcg.at(k);
    }
    return v;
  };
}

std::string log_header() {
  return "epoch\tl_normal\tl_bpr\tl_toi\tl_total\tval_H@5\tval_H@10\tval_N@5\tval_N@10\twall_seconds";
}

std::string log_line(const EpochRecord& r) {
  std::ostringstream out;
  out.precision(10);
  auto val = [&](const char* k) {
    auto it = r.validation.values.find(k);
    return it == r.validation.values.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
  };
  out << r.epoch << '\t' << r.loss.l_normal << '\t' << r.loss.l_bpr << '\t' << r.loss.l_toi << '\t'
      << r.loss.l_total << '\t' << val("H@5") << '\t' << val("H@10") << '\t' << val("N@5") << '\t' << val("N@10")
      << '\t' << r.wall_seconds;
  return out.str();
}

FitResult fit(PASRec& model, const std::vector<data::SequenceSample>& train, const TrainConfig& cfg,
              const Validator& validate, std::ostream* log) {
  cfg.validate();
  if (train.empty()) throw data::DataError("training split is empty");
  AdamW opt(cfg.learning_rate, cfg.weight_decay);
  std::mt19937_64 rng(cfg.seed);
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});
  const kernels::Exec exec = kernels::Exec::Parallel;

  FitResult result;
  result.best_metric = -std::numeric_limits<double>::infinity();
  ParameterStore best = model.params();
  int since_improvement = 0;
  if (log) *log << log_header() << '\n';
  const auto start = std::chrono::steady_clock::now();

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    int batches = 0;
    for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
      const std::span<const size_t> idx(order.data() + begin, end - begin);
      const Batch batch = make_batch(train, idx);
      const StepDraws draws = draw_step(model.config(), batch.size, batch.len, rng);
      const auto l = train_step(model, opt, batch, draws, cfg, exec);
      rec.loss.l_normal += l.l_normal;
      rec.loss.l_bpr += l.l_bpr;
      rec.loss.l_ioi += l.l_ioi;
      rec.loss.l_toi += l.l_toi;
      rec.loss.l_total += l.l_total;
      ++batches;
    }
    rec.loss.l_normal /= batches;
    rec.loss.l_bpr /= batches;
    rec.loss.l_ioi /= batches;
    rec.loss.l_toi /= batches;
    rec.loss.l_total /= batches;
    if (!model.params().all_finite()) throw NumericError("parameters became non-finite in epoch " + std::to_string(epoch));

    rec.validation = validate(model, epoch);
    ++result.validations;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(rec);
    if (log) *log << log_line(rec) << '\n' << std::flush;

    if (rec.validation.metric > result.best_metric) {
      result.best_metric = rec.validation.metric;
      result.best_epoch = epoch;
      best = model.params();
      since_improvement = 0;
    } else if (++since_improvement >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }
  model.params() = std::move(best);
  return result;
}

double GradCheckReport::max_error() const {
  double m = 0.0;
  for (const auto& [group, err] : max_rel_error) m = std::max(m, err);
  return m;
}

GradCheckReport grad_check(const PASRec& model, const Batch& batch, const StepDraws& draws, double h) {
  const Gradients analytic = compute_gradients(model, batch, draws, kernels::Exec::Serial);
  PASRec probe = model;
  auto loss_at = [&]() {
    ad::Tape tape(false);
    Binding frozen(probe.params(), tape, false);
    return forward_loss(probe, frozen, batch, draws, kernels::Exec::Serial).total.value()(0, 0);
  };
  GradCheckReport report;
  auto& tensors = probe.params().tensors();
  for (size_t i = 0; i < tensors.size(); ++i) {
    const std::string& group = tensors[i].group;
    double& worst = report.max_rel_error[group];
    Matrix& value = tensors[i].value;
    for (Eigen::Index j = 0; j < value.size(); ++j) {
      const double saved = value.data()[j];
      value.data()[j] = saved + h;
      const double up = loss_at();
      value.data()[j] = saved - h;
      const double down = loss_at();
      value.data()[j] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.grads[i].data()[j];
      const double err = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-6);
      worst = std::max(worst, err);
      ++report.checked[group];
    }
  }
  return report;
}

}  // namespace pasrec::train
