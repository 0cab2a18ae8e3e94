#include "pasrec/model.hpp"

#include <stdexcept>

#include "pasrec/toi_predictor.hpp"

namespace pasrec {

using nlohmann::json;

Batch make_batch(const std::vector<data::SequenceSample>& samples, std::span<const size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  Batch b;
  b.size = static_cast<int>(indices.size());
  b.len = static_cast<int>(samples[indices[0]].history_items.size());
  for (size_t i : indices) {
    const auto& s = samples.at(i);
    if (static_cast<int>(s.history_items.size()) != b.len) throw std::invalid_argument("make_batch: ragged windows");
    b.items.insert(b.items.end(), s.history_items.begin(), s.history_items.end());
    b.times.insert(b.times.end(), s.history_times.begin(), s.history_times.end());
    b.mask.insert(b.mask.end(), s.history_mask.begin(), s.history_mask.end());
    b.targets.push_back(s.target_item);
    b.target_times.push_back(s.target_time);
    double last = 0.0;
    for (int j = 0; j < b.len; ++j) {
      if (s.history_mask[static_cast<size_t>(j)]) last = s.history_times[static_cast<size_t>(j)];
    }
    b.last_times.push_back(last);
  }
  return b;
}

Batch make_batch(const std::vector<data::SequenceSample>& samples) {
  std::vector<size_t> idx(samples.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return make_batch(samples, idx);
}

StepDraws draw_step(const ModelConfig& cfg, int batch, int len, std::mt19937_64& rng) {
  StepDraws d;
  std::uniform_int_distribution<int> step(1, cfg.diffusion.steps);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution drop(cfg.diffusion.p_uncond);
  d.t.resize(static_cast<size_t>(batch));
  for (auto& t : d.t) t = step(rng);
  d.noise.resize(batch, cfg.dim);
  for (Eigen::Index i = 0; i < d.noise.size(); ++i) d.noise.data()[i] = normal(rng);
  d.use_condition.resize(static_cast<size_t>(batch));
  for (auto& u : d.use_condition) u = drop(rng) ? 0 : 1;
  d.negative_mix = objectives::negative_mix_matrix(batch, cfg.loss.k, rng, &d.clamped_negatives);
  if (cfg.encoder.dropout > 0.0) {
    std::bernoulli_distribution keep(1.0 - cfg.encoder.dropout);
    const double inv = 1.0 / (1.0 - cfg.encoder.dropout);
    for (int m = 0; m < 2 * cfg.encoder.layers; ++m) {
      Matrix mask(static_cast<Eigen::Index>(batch) * len, cfg.dim);
      for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? inv : 0.0;
      d.dropout.push_back(std::move(mask));
    }
  }
  return d;
}

namespace {

ParameterStore init_parameters(const ModelConfig& cfg, int item_count) {
  ParameterStore store;
  Initializer init(cfg.init_seed);
  encoder::add_parameters(store, init, cfg, item_count);
  if (cfg.toi_enabled()) toi::add_parameters(store, init, cfg);
  diffusion::add_parameters(store, init, cfg);
  return store;
}

ModelConfig checked(ModelConfig cfg) {
  cfg.time_encoder.dim = cfg.dim;
  cfg.validate();
  return cfg;
}

}  // namespace

PASRec::PASRec(ModelConfig cfg, int item_count)
    : cfg_(checked(std::move(cfg))),
      item_count_(item_count),
      params_(init_parameters(cfg_, item_count)),
      time_encoder_(cfg_.time_encoder),
      schedule_(diffusion::build_schedule(cfg_.diffusion.steps, cfg_.diffusion.beta_start, cfg_.diffusion.beta_end)),
      inference_steps_(diffusion::ddim_timesteps(cfg_.diffusion.steps, cfg_.diffusion.infer_steps)) {
  if (item_count < 1) throw std::invalid_argument("model needs at least one item");
}

PASRec::PASRec(ModelConfig cfg, int item_count, ParameterStore params, std::vector<double> rff_frequencies)
    : PASRec(std::move(cfg), item_count) {
  if (!params_.same_shapes(params)) throw std::invalid_argument("parameter shapes do not match the model config");
  params_ = std::move(params);
  if (!rff_frequencies.empty()) time_encoder_.set_rff_frequencies(std::move(rff_frequencies));
}

Checkpoint PASRec::to_checkpoint(json extra_meta) const {
  Checkpoint c;
  c.meta = std::move(extra_meta);
  c.meta["model_config"] = model_config_to_json(cfg_);
  c.meta["item_count"] = item_count_;
  c.meta["rff_seed"] = cfg_.time_encoder.seed;
  c.meta["rff_frequencies"] = time_encoder_.rff_frequencies();
  c.params = params_;
  return c;
}

PASRec PASRec::from_checkpoint(const Checkpoint& ckpt) {
  return PASRec(model_config_from_json(ckpt.meta.at("model_config")), ckpt.meta.at("item_count").get<int>(),
                ckpt.params, ckpt.meta.value("rff_frequencies", std::vector<double>{}));
}

namespace {

Matrix encode_rows(const TimeEncoder& enc, std::span<const double> times) {
  Matrix out(static_cast<Eigen::Index>(times.size()), enc.dim());
  for (size_t i = 0; i < times.size(); ++i) enc.encode_into(times[i], out.row(static_cast<Eigen::Index>(i)).data());
  return out;
}

}  // namespace

Representation represent(const PASRec& model, const Binding& params, const Batch& batch,
                         const encoder::EncodeOptions& options) {
  const ModelConfig& cfg = model.config();
  if (batch.len != cfg.max_len) throw std::invalid_argument("batch window length differs from model.max_len");
  ad::Tape& tape = params.tape();
  ad::Var items = encoder::lookup(params, batch.items);
  ad::Var fused = model.time_encoder().time_aware()
                      ? ad::fuse_sequence(items, batch.times, batch.mask, model.time_encoder())
                      : ad::fuse_positions(items, params["position_embedding"], batch.mask, batch.len);
  Representation r;
  r.g = encoder::encode(params, fused, batch.mask, batch.size, batch.len, cfg.encoder, options);
  r.g_prime = r.g;
  if (model.toi_enabled()) {
    ad::Var tau_prev = tape.constant(encode_rows(model.time_encoder(), batch.last_times));
    r.tau_hat = toi::predict_toi(params, r.g, tau_prev);
    r.g_prime = toi::fuse(params, r.g, r.tau_hat, cfg.toi.gamma);
  }
  return r;
}

LossOutput forward_loss(const PASRec& model, const Binding& params, const Batch& batch, const StepDraws& draws,
                        kernels::Exec exec) {
  const ModelConfig& cfg = model.config();
  ad::Tape& tape = params.tape();
  if (static_cast<int>(draws.t.size()) != batch.size) throw std::invalid_argument("step draws do not match the batch");
  encoder::EncodeOptions opts;
  opts.exec = exec;
  if (!draws.dropout.empty()) opts.dropout = &draws.dropout;
  const Representation rep = represent(model, params, batch, opts);

  ad::Var e0 = encoder::lookup(params, batch.targets);
  ad::Var cond = ad::where_rows(draws.use_condition, rep.g_prime, params["denoiser.uncond"]);
  ad::Var pos_t = diffusion::q_sample(e0, draws.t, draws.noise, model.schedule());
  ad::Var pos_hat = diffusion::denoise(params, pos_t, draws.t, cond);
  ad::Var neg = ad::matmul(tape.constant(draws.negative_mix), e0);
  ad::Var neg_t = diffusion::q_sample(neg, draws.t, draws.noise, model.schedule());
  ad::Var neg_hat = diffusion::denoise(params, neg_t, draws.t, cond);

  LossOutput out;
  ad::Var l_normal = objectives::loss_normal(pos_hat, e0);
  ad::Var l_bpr = objectives::loss_bpr(pos_hat, e0, neg_hat, neg, cfg.loss.k, cfg.loss.sign_mode, &out.degenerate_bpr);
  ad::Var l_ioi = ad::lincomb(l_normal, cfg.loss.lambda, l_bpr, 1.0 - cfg.loss.lambda);
  double l_toi_value = 0.0;
  if (model.toi_enabled()) {
    ad::Var tau = tape.constant(encode_rows(model.time_encoder(), batch.target_times));
    ad::Var l_toi = toi::toi_loss(rep.tau_hat, tau, &out.degenerate_toi);
    l_toi_value = l_toi.value()(0, 0);
    out.total = ad::lincomb(l_ioi, cfg.loss.eta, l_toi, 1.0 - cfg.loss.eta);
    out.values = objectives::combine(l_normal.value()(0, 0), l_bpr.value()(0, 0), l_toi_value, cfg.loss.lambda,
                                     cfg.loss.eta);
  } else {
    out.total = l_ioi;
    out.values = objectives::combine(l_normal.value()(0, 0), l_bpr.value()(0, 0), 0.0, cfg.loss.lambda, 1.0);
  }
  return out;
}

Prediction predict(const PASRec& model, const Batch& batch, std::span<const std::uint64_t> noise_seeds,
                   kernels::Exec exec) {
  if (static_cast<int>(noise_seeds.size()) != batch.size) throw std::invalid_argument("one noise seed per sample");
  ad::Tape tape(false);
  Binding frozen(model.params(), tape, false);
  encoder::EncodeOptions opts;
  opts.exec = exec;
  const Representation rep = represent(model, frozen, batch, opts);
  Prediction p;
  p.g = rep.g.value();
  p.g_prime = rep.g_prime.value();
  if (rep.tau_hat.valid()) p.tau_hat = rep.tau_hat.value();
  if (model.time_encoder().time_aware()) p.tau = encode_rows(model.time_encoder(), batch.target_times);
  p.e0_hat = diffusion::sample(model.params(), p.g_prime, model.config().diffusion.w, model.schedule(),
                               model.inference_steps(), diffusion::initial_noise(noise_seeds, model.config().dim));
  return p;
}

}  // namespace pasrec
