#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "helpers.hpp"
#include "pasrec/trainer.hpp"

using namespace pasrec;
using namespace pasrec::train;

namespace {

ParameterStore scalar_store(double value) {
  ParameterStore s;
  s.add("p", "p", Matrix::Constant(1, 1, value));
  return s;
}

TrainConfig quick_train(int max_epochs, int patience = 10) {
  TrainConfig t;
  t.learning_rate = 1e-2;
  t.batch_size = 16;
  t.max_epochs = max_epochs;
  t.patience = patience;
  return t;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("first AdamW step is lr times the gradient sign") {
    for (double g : {0.5, -3.0, 1e-3}) {
      auto s = scalar_store(2.0);
      AdamW opt(0.1, 0.0);
      opt.update(s, {Matrix::Constant(1, 1, g)});
      const double expect = 2.0 - 0.1 * g / (std::abs(g) + 1e-8);
      CHECK(s.value("p")(0, 0) == doctest::Approx(expect).epsilon(1e-14));
    }
  }

  TEST_CASE("weight decay is decoupled from the gradient") {
    auto s = scalar_store(2.0);
    AdamW opt(0.1, 0.5);
    opt.update(s, {Matrix::Zero(1, 1)});
    CHECK(s.value("p")(0, 0) == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0).epsilon(1e-15));
    CHECK(opt.steps() == 1);
  }

  TEST_CASE("train_step: zero learning rate, determinism and a falling loss") {
    const auto data = testing::synth_data(50);
    const auto m = testing::tiny_model();
    const int items = data.vocab.item_count();
    const auto& train = data.bundle.train;
    const std::vector<data::SequenceSample> first(train.begin(), train.begin() + 16);
    const Batch batch = make_batch(first);

    PASRec frozen(m, items);
    const ParameterStore before = frozen.params();
    TrainConfig zero;
    zero.learning_rate = 0.0;
    zero.weight_decay = 0.0;
    AdamW opt0(0.0, 0.0);
    std::mt19937_64 rng(1);
    train_step(frozen, opt0, batch, draw_step(m, batch.size, batch.len, rng), zero);
    for (size_t i = 0; i < before.size(); ++i) CHECK(frozen.params().tensors()[i].value == before.tensors()[i].value);

    auto run = [&](int steps) {
      PASRec model(m, items);
      TrainConfig cfg;
      cfg.learning_rate = 3e-3;
      AdamW opt(cfg.learning_rate, cfg.weight_decay);
      std::mt19937_64 r(9);
      std::vector<double> totals;
      for (int s = 0; s < steps; ++s) {
        totals.push_back(train_step(model, opt, batch, draw_step(m, batch.size, batch.len, r), cfg).l_ioi);
      }
      return std::make_pair(totals, model.params());
    };
    const auto [a_loss, a_params] = run(3);
    const auto [b_loss, b_params] = run(3);
    CHECK(a_loss == b_loss);
    for (size_t i = 0; i < a_params.size(); ++i) CHECK(a_params.tensors()[i].value == b_params.tensors()[i].value);

    const auto [losses, unused] = run(200);
    double early = 0.0, late = 0.0;
    for (int i = 0; i < 10; ++i) {
      early += losses[static_cast<size_t>(i)];
      late += losses[losses.size() - 1 - static_cast<size_t>(i)];
    }
    CHECK(late < early);
  }

  TEST_CASE("frozen validation metric stops after patience + 1 validations") {
    const auto data = testing::synth_data(30);
    PASRec model(testing::tiny_model(), data.vocab.item_count());
    const Validator frozen = [](const PASRec&, int) { return Validation{0.25, {}}; };
    const auto r = fit(model, data.bundle.train, quick_train(100, 10), frozen);
    CHECK(r.validations == 11);
    CHECK(r.early_stopped);
    CHECK(r.best_epoch == 1);
  }

  TEST_CASE("max_epochs caps the loop") {
    const auto data = testing::synth_data(30);
    PASRec model(testing::tiny_model(), data.vocab.item_count());
    const Validator rising = [](const PASRec&, int epoch) { return Validation{static_cast<double>(epoch), {}}; };
    const auto r = fit(model, data.bundle.train, quick_train(1, 10), rising);
    CHECK(r.validations == 1);
    CHECK(r.log.size() == 1);
    CHECK_FALSE(r.early_stopped);
  }

  TEST_CASE("best checkpoint is restored and matches the logged maximum") {
    const auto data = testing::synth_data(30);
    PASRec model(testing::tiny_model(), data.vocab.item_count());
    std::vector<ParameterStore> seen;
    const std::vector<double> metrics{0.1, 0.4, 0.3, 0.2, 0.35, 0.1};
    const Validator scripted = [&](const PASRec& m, int epoch) {
      seen.push_back(m.params());
      return Validation{metrics[static_cast<size_t>(epoch - 1)], {{"N@10", metrics[static_cast<size_t>(epoch - 1)]}}};
    };
    std::ostringstream log;
    const auto r = fit(model, data.bundle.train, quick_train(6, 3), scripted, &log);
    double best = -1.0;
    for (const auto& rec : r.log) best = std::max(best, rec.validation.metric);
    CHECK(r.best_metric == best);
    CHECK(r.best_epoch == 2);
    CHECK(r.validations == 5);
    for (size_t i = 0; i < seen[1].size(); ++i) CHECK(model.params().tensors()[i].value == seen[1].tensors()[i].value);
    std::string header;
    std::getline(std::istringstream(log.str()) >> std::ws, header);
    CHECK(header == log_header());
  }

  TEST_CASE("gradient check on a tiny full model") {
    ModelConfig m = testing::tiny_model(TimeEncoderKind::RFF, 2);
    m.diffusion.steps = 4;
    m.diffusion.p_uncond = 0.0;
    m.toi.gamma = 0.6;
    m.loss.eta = 0.5;
    m.loss.lambda = 0.4;
    const auto data = testing::synth_data(10);
    PASRec model(m, data.vocab.item_count());
    const std::vector<data::SequenceSample> four(data.bundle.train.begin(), data.bundle.train.begin() + 4);
    const Batch batch = make_batch(four);
    std::mt19937_64 rng(3);
    const StepDraws draws = draw_step(m, batch.size, batch.len, rng);
    const auto report = grad_check(model, batch, draws);
    for (const char* group : {"item_embedding", "encoder", "toi", "fusion", "denoiser"}) {
      REQUIRE(report.max_rel_error.contains(group));
      CHECK(report.max_rel_error.at(group) <= 1e-4);
    }
    // Every sample is conditioned, so the unconditional token has zero gradient
    // and a locally flat loss.
    CHECK(report.max_rel_error.at("uncond") == 0.0);

    const Gradients g = compute_gradients(model, batch, draws);
    const size_t toi_w2 = model.params().index_of("toi.w2");
    CHECK(g.grads[toi_w2].norm() > 0.0);
  }
}
