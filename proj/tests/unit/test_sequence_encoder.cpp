#include <doctest.h>

#include <cmath>
#include <random>

#include "pasrec/sequence_encoder.hpp"
#include "pasrec/trainer.hpp"

using namespace pasrec;

namespace {

ModelConfig small_config(int layers = 2) {
  ModelConfig m;
  m.dim = 8;
  m.max_len = 4;
  m.time_encoder.dim = 8;
  m.encoder.layers = layers;
  m.encoder.heads = 2;
  return m;
}

ParameterStore make_store(const ModelConfig& m, int items, std::uint64_t seed = 1) {
  ParameterStore store;
  Initializer init(seed);
  encoder::add_parameters(store, init, m, items);
  return store;
}

Matrix random_rows(int r, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

Matrix run_encode(const ParameterStore& store, const Matrix& fused, const std::vector<std::uint8_t>& mask, int batch,
                  int len, const EncoderConfig& cfg, kernels::Exec exec = kernels::Exec::Serial) {
  ad::Tape tape(false);
  Binding b(store, tape, false);
  encoder::EncodeOptions opt;
  opt.exec = exec;
  return encoder::encode(b, tape.constant(fused), mask, batch, len, cfg, opt).value();
}

}  // namespace

TEST_SUITE("sequence_encoder") {
  TEST_CASE("lookup gathers rows and rejects out-of-range indices") {
    const auto m = small_config();
    const auto store = make_store(m, 5);
    ad::Tape tape(false);
    Binding b(store, tape, false);
    const Matrix& table = store.value("item_embedding");
    const std::vector<int> idx{0, 3, 3};
    const Matrix g = encoder::lookup(b, idx).value();
    CHECK(g.row(0) == table.row(0));
    CHECK(g.row(1) == g.row(2));
    for (int k = 0; k < 3; ++k) {
      const std::vector<int> one{idx[static_cast<size_t>(k)]};
      CHECK(encoder::lookup(b, one).value().row(0) == g.row(k));
    }
    const std::vector<int> bad{6};
    CHECK_THROWS_AS(encoder::lookup(b, bad), std::out_of_range);
  }

  TEST_CASE("single token with identity projections and no FFN yields the normalized input") {
    auto m = small_config(1);
    auto store = make_store(m, 3);
    for (const char* p : {"encoder.0.attn.wq", "encoder.0.attn.wk", "encoder.0.attn.wv", "encoder.0.attn.wo"}) {
      store.value(p) = Matrix::Identity(8, 8);
    }
    store.value("encoder.0.ffn.w2").setZero();
    const Matrix x = random_rows(1, 8, 5);
    const std::vector<std::uint8_t> mask{1};
    const Matrix g = run_encode(store, x, mask, 1, 1, m.encoder);
    const double mu = x.mean();
    const double var = (x.array() - mu).square().mean();
    for (int c = 0; c < 8; ++c) {
      // LN(x + LN(x)) equals LN(x) up to the epsilon inside the norm.
      const double expect = (x(0, c) - mu) / std::sqrt(var + 1e-5);
      CHECK(g(0, c) == doctest::Approx(expect).epsilon(1e-4));
    }
  }

  TEST_CASE("left padding does not change the representation") {
    const auto m = small_config();
    const auto store = make_store(m, 5);
    const Matrix ab = random_rows(2, 8, 9);
    Matrix three(3, 8), four(4, 8);
    three << random_rows(1, 8, 10), ab;
    four << random_rows(2, 8, 11), ab;
    const std::vector<std::uint8_t> m3{0, 1, 1}, m4{0, 0, 1, 1};
    const Matrix g3 = run_encode(store, three, m3, 1, 3, m.encoder);
    const Matrix g4 = run_encode(store, four, m4, 1, 4, m.encoder);
    CHECK((g3 - g4).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("order matters once time or position is fused in") {
    for (auto kind : {TimeEncoderKind::GaussianKernel, TimeEncoderKind::AbsolutePosition}) {
      ModelConfig m = small_config();
      m.time_encoder.kind = kind;
      PASRec model(m, 6);
      data::SequenceSample s;
      s.history_items = {0, 1, 2, 3};
      s.history_times = {0.0, 0.1, 0.4, 0.5};
      s.history_mask = {0, 1, 1, 1};
      s.target_item = 4;
      s.target_time = 0.6;
      data::SequenceSample swapped = s;
      std::swap(swapped.history_items[1], swapped.history_items[2]);
      const std::vector<data::SequenceSample> both{s, swapped};
      const Batch batch = make_batch(both);
      ad::Tape tape(false);
      Binding b(model.params(), tape, false);
      const Matrix g = represent(model, b, batch).g.value();
      CHECK((g.row(0) - g.row(1)).cwiseAbs().maxCoeff() > 1e-6);
    }
  }

  TEST_CASE("attention rows sum to one and serial equals parallel") {
    const auto m = small_config();
    const auto store = make_store(m, 5);
    const Matrix seq = random_rows(8, 8, 13);
    const std::vector<std::uint8_t> mask{0, 0, 1, 1, 1, 1, 1, 1};
    ad::Tape tape(false);
    Binding b(store, tape, false);
    std::vector<kernels::AttentionProbs> probs;
    encoder::EncodeOptions opt;
    opt.attention = &probs;
    const Matrix g = encoder::encode(b, tape.constant(seq), mask, 2, 4, m.encoder, opt).value();
    REQUIRE(probs.size() == 2);
    // First sample, head 0, query 2 over its two real keys.
    CHECK(probs[0][2 * 4 + 2] + probs[0][2 * 4 + 3] == doctest::Approx(1.0).epsilon(1e-14));
    const Matrix gs = run_encode(store, seq, mask, 2, 4, m.encoder, kernels::Exec::Serial);
    CHECK((g - gs).cwiseAbs().maxCoeff() < 1e-12);
    const std::vector<std::uint8_t> empty{0, 0, 0, 0};
    CHECK_THROWS(run_encode(store, seq.topRows(4), empty, 1, 4, m.encoder));
  }

  TEST_CASE("candidate scores skip the padding row") {
    Matrix table(6, 3);
    table << 9, 9, 9, 1, 2, 3, 0, 1, 0, -1, 0, 2, 4, 4, 4, 0.5, -2, 1;
    Matrix q(2, 3);
    q << 1, -1, 2, 0, 0, 0;
    const Matrix s = encoder::score_candidates(q, table, false);
    REQUIRE(s.cols() == 5);
    for (int j = 0; j < 5; ++j) {
      double dot = 0.0;
      for (int c = 0; c < 3; ++c) dot += q(0, c) * table(j + 1, c);
      CHECK(s(0, j) == doctest::Approx(dot).epsilon(1e-15));
      CHECK(s(1, j) == 0.0);
    }
    Matrix ortho = Matrix::Zero(4, 3);
    ortho.bottomRows(3) = Matrix::Identity(3, 3);
    Matrix e2 = ortho.row(2);
    Eigen::Index arg = 0;
    encoder::score_candidates(e2, ortho, false).row(0).maxCoeff(&arg);
    CHECK(arg + 1 == 2);
  }

  TEST_CASE("encoder gradients match finite differences") {
    ModelConfig m = small_config();
    m.time_encoder.kind = TimeEncoderKind::GaussianKernel;
    m.diffusion.steps = 4;
    m.diffusion.infer_steps = 2;
    m.diffusion.p_uncond = 0.0;
    m.toi.gamma = 0.5;
    m.loss.eta = 0.5;
    m.validate();
    PASRec model(m, 6);
    std::vector<data::SequenceSample> samples;
    for (int i = 0; i < 3; ++i) {
      data::SequenceSample s;
      s.history_items = {0, 1 + i, 2 + i, 3};
      s.history_times = {0.0, 0.1, 0.2 + 0.1 * i, 0.5};
      s.history_mask = {0, 1, 1, 1};
      s.target_item = 5 - i;
      s.target_time = 0.6 + 0.1 * i;
      samples.push_back(s);
    }
    const Batch batch = make_batch(samples);
    std::mt19937_64 rng(4);
    const StepDraws draws = draw_step(m, batch.size, batch.len, rng);
    const auto report = train::grad_check(model, batch, draws);
    REQUIRE(report.max_rel_error.contains("encoder"));
    CHECK(report.max_rel_error.at("encoder") <= 1e-4);
  }
}
