#pragma once

#include <filesystem>
#include <string>

#include "pasrec/config.hpp"
#include "pasrec/datastore.hpp"
#include "pasrec/synth.hpp"

namespace pasrec::testing {

inline ModelConfig tiny_model(TimeEncoderKind kind = TimeEncoderKind::GaussianKernel, int layers = 1) {
  ModelConfig m;
  m.dim = 8;
  m.max_len = 5;
  m.time_encoder.kind = kind;
  m.time_encoder.dim = 8;
  m.time_encoder.sigma = 0.1;
  m.encoder.layers = layers;
  m.encoder.heads = 2;
  m.encoder.ff_mult = 2;
  m.diffusion.steps = 20;
  m.diffusion.infer_steps = 4;
  m.diffusion.w = 1.0;
  m.loss.k = 2;
  return m;
}

inline data::PreparedData synth_data(int users, std::uint64_t seed = 1, int max_len = 5,
                                     SplitKind split = SplitKind::LOO) {
  const auto spec = synth::acceptance_spec(seed, users);
  return data::prepare(synth::generate(spec).events, 1, max_len, split, seed);
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("pasrec_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace pasrec::testing
