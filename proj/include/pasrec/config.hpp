#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace pasrec {

/// Raised for invalid or unknown configuration; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TimeEncoderKind { Sinusoidal, GaussianKernel, RFF, AbsolutePosition };
enum class BprSignMode { Intended, Verbatim };
enum class SplitKind { LOO, Temporal811 };

std::string to_string(TimeEncoderKind k);
std::string to_string(BprSignMode m);
std::string to_string(SplitKind k);
TimeEncoderKind parse_time_encoder_kind(const std::string& s);
BprSignMode parse_sign_mode(const std::string& s);
SplitKind parse_split_kind(const std::string& s);

struct TimeEncoderConfig {
  TimeEncoderKind kind = TimeEncoderKind::Sinusoidal;
  int dim = 64;
  double freq = 10000.0;
  double sigma = 0.05;
  std::uint64_t seed = 7;

  void validate() const;
};

struct EncoderConfig {
  int layers = 2;
  int heads = 2;
  int ff_mult = 4;
  double dropout = 0.0;
};

struct ToIConfig {
  double gamma = 0.8;
  int hidden_mult = 2;
};

struct DiffusionConfig {
  int steps = 2000;  // training T
  int infer_steps = 20;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  double w = 8.0;
  double p_uncond = 0.1;
  int hidden_mult = 4;
  std::uint64_t seed = 11;
};

struct LossConfig {
  double lambda = 0.4;
  double eta = 0.2;
  int k = 4;
  BprSignMode sign_mode = BprSignMode::Intended;
};

/// Every scalar hyperparameter of the model. `dim` drives the time encoder width.
struct ModelConfig {
  int dim = 64;
  int max_len = 10;
  std::uint64_t init_seed = 1;
  TimeEncoderConfig time_encoder;
  EncoderConfig encoder;
  ToIConfig toi;
  DiffusionConfig diffusion;
  LossConfig loss;

  /// The ToI predictor and fusion path exist only with real timestamps and a
  /// live coupling (gamma > 0 or eta < 1).
  bool toi_enabled() const;
  void validate() const;
};

struct TrainConfig {
  double learning_rate = 3e-4;
  int batch_size = 256;
  int eval_batch_size = 32;
  int patience = 10;
  int max_epochs = 200;
  double weight_decay = 0.01;
  double grad_clip = 0.0;  // 0 disables clipping
  std::uint64_t seed = 3;
  int threads = 1;

  void validate() const;
};

struct EvalConfig {
  bool exclude_history = false;
  bool cosine = false;
  std::uint64_t seed = 5;
  int threads = 1;
  int batch_size = 32;
  std::vector<int> ks{5, 10};
};

struct DataConfig {
  std::string input;
  std::string format = "csv";
  std::string delimiter;  // overrides the format's delimiter when set
  bool header = true;
  bool strict = false;
  int user_col = 0;
  int item_col = 1;
  int time_col = 2;
  int min_count = 5;
  SplitKind split = SplitKind::LOO;
  std::uint64_t seed = 42;
};

struct RunConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  std::string run_dir = "runs/default";
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);
nlohmann::json model_config_to_json(const ModelConfig& m);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Every dotted key a RunConfig accepts, e.g. "loss.eta" or "time_encoder.kind".
std::vector<std::string> config_keys();

/// Applies `key = value`; the value is parsed according to the key's type.
/// Unknown keys and unparsable values raise ConfigError.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

/// Merges a JSON document (nested or dotted keys) into cfg; unknown keys are rejected.
void merge_json(RunConfig& cfg, const nlohmann::json& doc);

/// Environment overrides: PASREC_<KEY> with dots as underscores, upper case
/// (loss.eta -> PASREC_LOSS_ETA).
void apply_env_overrides(RunConfig& cfg, const char* const* envp);
std::string env_name_for(const std::string& key);

}  // namespace pasrec
