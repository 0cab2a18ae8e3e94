#include "pasrec/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <functional>
#include <sstream>

namespace pasrec {

using nlohmann::json;

std::string to_string(TimeEncoderKind k) {
  switch (k) {
    case TimeEncoderKind::Sinusoidal: return "sinusoidal";
    case TimeEncoderKind::GaussianKernel: return "gaussian";
    case TimeEncoderKind::RFF: return "rff";
    case TimeEncoderKind::AbsolutePosition: return "absolute";
  }
  return "?";
}

std::string to_string(BprSignMode m) {
  return m == BprSignMode::Intended ? "intent" : "verbatim";
}

std::string to_string(SplitKind k) { return k == SplitKind::LOO ? "loo" : "temporal"; }

TimeEncoderKind parse_time_encoder_kind(const std::string& s) {
  if (s == "sinusoidal") return TimeEncoderKind::Sinusoidal;
  if (s == "gaussian") return TimeEncoderKind::GaussianKernel;
  if (s == "rff") return TimeEncoderKind::RFF;
  if (s == "absolute") return TimeEncoderKind::AbsolutePosition;
  throw ConfigError("unknown time encoder kind '" + s + "' (sinusoidal|gaussian|rff|absolute)");
}

BprSignMode parse_sign_mode(const std::string& s) {
  if (s == "intent") return BprSignMode::Intended;
  if (s == "verbatim") return BprSignMode::Verbatim;
  throw ConfigError("unknown loss.sign_mode '" + s + "' (intent|verbatim)");
}

SplitKind parse_split_kind(const std::string& s) {
  if (s == "loo") return SplitKind::LOO;
  if (s == "temporal") return SplitKind::Temporal811;
  throw ConfigError("unknown split kind '" + s + "' (loo|temporal)");
}

void TimeEncoderConfig::validate() const {
  if (dim <= 0) throw ConfigError("time encoder dimension must be positive");
  if ((kind == TimeEncoderKind::Sinusoidal || kind == TimeEncoderKind::RFF) && dim % 2 != 0) {
    throw ConfigError("sinusoidal and rff time encoders need an even dimension");
  }
  if (kind == TimeEncoderKind::GaussianKernel && dim < 2) {
    throw ConfigError("gaussian time encoder needs dimension >= 2");
  }
  if (!(sigma > 0.0)) throw ConfigError("time_encoder.sigma must be positive");
  if (!(freq > 0.0)) throw ConfigError("time_encoder.freq must be positive");
}

bool ModelConfig::toi_enabled() const {
  return time_encoder.kind != TimeEncoderKind::AbsolutePosition &&
         (toi.gamma > 0.0 || loss.eta < 1.0);
}

void ModelConfig::validate() const {
  if (dim <= 0) throw ConfigError("model.dim must be positive");
  if (max_len < 2) throw ConfigError("model.max_len must be >= 2");
  time_encoder.validate();
  if (time_encoder.dim != dim) throw ConfigError("time encoder width must equal model.dim");
  if (encoder.layers < 1 || encoder.heads < 1 || encoder.ff_mult < 1) {
    throw ConfigError("encoder layers/heads/ff_mult must be positive");
  }
  if (dim % encoder.heads != 0) throw ConfigError("encoder.heads must divide model.dim");
  if (encoder.dropout < 0.0 || encoder.dropout >= 1.0) throw ConfigError("encoder.dropout must be in [0,1)");
  if (toi.gamma < 0.0 || toi.gamma > 1.0) throw ConfigError("toi.gamma must be in [0,1]");
  if (toi.hidden_mult < 1) throw ConfigError("toi.hidden_mult must be positive");
  if (diffusion.steps < 1) throw ConfigError("diffusion.T must be positive");
  if (diffusion.infer_steps < 1) throw ConfigError("diffusion.infer_steps must be positive");
  if (!(diffusion.beta_start > 0.0) || diffusion.beta_start > diffusion.beta_end ||
      !(diffusion.beta_end < 1.0)) {
    throw ConfigError("diffusion betas must satisfy 0 < beta_start <= beta_end < 1");
  }
  if (diffusion.w < 0.0) throw ConfigError("diffusion.w must be >= 0");
  if (diffusion.p_uncond < 0.0 || diffusion.p_uncond > 1.0) throw ConfigError("diffusion.p_uncond must be in [0,1]");
  if (diffusion.hidden_mult < 1) throw ConfigError("diffusion.hidden_mult must be positive");
  if (loss.lambda < 0.0 || loss.lambda > 1.0) throw ConfigError("loss.lambda must be in [0,1]");
  if (loss.eta < 0.0 || loss.eta > 1.0) throw ConfigError("loss.eta must be in [0,1]");
  if (loss.k < 1) throw ConfigError("loss.k must be >= 1");
}

void TrainConfig::validate() const {
  if (learning_rate < 0.0) throw ConfigError("train.lr must be >= 0");
  if (batch_size < 1 || eval_batch_size < 1) throw ConfigError("batch sizes must be positive");
  if (patience < 1) throw ConfigError("train.patience must be positive");
  if (max_epochs < 1) throw ConfigError("train.max_epochs must be positive");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
  if (grad_clip < 0.0) throw ConfigError("train.grad_clip must be >= 0");
  if (threads < 1) throw ConfigError("train.threads must be >= 1");
}

json model_config_to_json(const ModelConfig& m) {
  json j;
  j["model"] = {{"dim", m.dim}, {"max_len", m.max_len}, {"init_seed", m.init_seed}};
  j["time_encoder"] = {{"kind", to_string(m.time_encoder.kind)},
                       {"freq", m.time_encoder.freq},
                       {"sigma", m.time_encoder.sigma},
                       {"seed", m.time_encoder.seed}};
  j["encoder"] = {{"layers", m.encoder.layers},
                  {"heads", m.encoder.heads},
                  {"ff_mult", m.encoder.ff_mult},
                  {"dropout", m.encoder.dropout}};
  j["toi"] = {{"gamma", m.toi.gamma}, {"hidden_mult", m.toi.hidden_mult}};
  j["diffusion"] = {{"T", m.diffusion.steps},
                    {"infer_steps", m.diffusion.infer_steps},
                    {"beta_start", m.diffusion.beta_start},
                    {"beta_end", m.diffusion.beta_end},
                    {"w", m.diffusion.w},
                    {"p_uncond", m.diffusion.p_uncond},
                    {"hidden_mult", m.diffusion.hidden_mult},
                    {"seed", m.diffusion.seed}};
  j["loss"] = {{"lambda", m.loss.lambda},
               {"eta", m.loss.eta},
               {"k", m.loss.k},
               {"sign_mode", to_string(m.loss.sign_mode)}};
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig m;
  const auto& mm = j.at("model");
  m.dim = mm.at("dim").get<int>();
  m.max_len = mm.at("max_len").get<int>();
  m.init_seed = mm.at("init_seed").get<std::uint64_t>();
  const auto& te = j.at("time_encoder");
  m.time_encoder.kind = parse_time_encoder_kind(te.at("kind").get<std::string>());
  m.time_encoder.freq = te.at("freq").get<double>();
  m.time_encoder.sigma = te.at("sigma").get<double>();
  m.time_encoder.seed = te.at("seed").get<std::uint64_t>();
  m.time_encoder.dim = m.dim;
  const auto& en = j.at("encoder");
  m.encoder.layers = en.at("layers").get<int>();
  m.encoder.heads = en.at("heads").get<int>();
  m.encoder.ff_mult = en.at("ff_mult").get<int>();
  m.encoder.dropout = en.at("dropout").get<double>();
  const auto& toi = j.at("toi");
  m.toi.gamma = toi.at("gamma").get<double>();
  m.toi.hidden_mult = toi.at("hidden_mult").get<int>();
  const auto& df = j.at("diffusion");
  m.diffusion.steps = df.at("T").get<int>();
  m.diffusion.infer_steps = df.at("infer_steps").get<int>();
  m.diffusion.beta_start = df.at("beta_start").get<double>();
  m.diffusion.beta_end = df.at("beta_end").get<double>();
  m.diffusion.w = df.at("w").get<double>();
  m.diffusion.p_uncond = df.at("p_uncond").get<double>();
  m.diffusion.hidden_mult = df.at("hidden_mult").get<int>();
  m.diffusion.seed = df.at("seed").get<std::uint64_t>();
  const auto& ls = j.at("loss");
  m.loss.lambda = ls.at("lambda").get<double>();
  m.loss.eta = ls.at("eta").get<double>();
  m.loss.k = ls.at("k").get<int>();
  m.loss.sign_mode = parse_sign_mode(ls.at("sign_mode").get<std::string>());
  return m;
}

void to_json(json& j, const RunConfig& c) {
  j = model_config_to_json(c.model);
  j["data"] = {{"input", c.data.input},
               {"format", c.data.format},
               {"delimiter", c.data.delimiter},
               {"header", c.data.header},
               {"strict", c.data.strict},
               {"user_col", c.data.user_col},
               {"item_col", c.data.item_col},
               {"time_col", c.data.time_col},
               {"min_count", c.data.min_count},
               {"split", to_string(c.data.split)},
               {"seed", c.data.seed}};
  j["train"] = {{"lr", c.train.learning_rate},
                {"batch_size", c.train.batch_size},
                {"eval_batch_size", c.train.eval_batch_size},
                {"patience", c.train.patience},
                {"max_epochs", c.train.max_epochs},
                {"weight_decay", c.train.weight_decay},
                {"grad_clip", c.train.grad_clip},
                {"seed", c.train.seed},
                {"threads", c.train.threads}};
  j["eval"] = {{"exclude_history", c.eval.exclude_history},
               {"similarity", c.eval.cosine ? "cosine" : "dot"},
               {"seed", c.eval.seed},
               {"threads", c.eval.threads},
               {"batch_size", c.eval.batch_size},
               {"ks", c.eval.ks}};
  j["run"] = {{"dir", c.run_dir}};
}

void from_json(const json& j, RunConfig& c) {
  c.model = model_config_from_json(j);
  const auto& d = j.at("data");
  c.data.input = d.at("input").get<std::string>();
  c.data.format = d.at("format").get<std::string>();
  c.data.delimiter = d.at("delimiter").get<std::string>();
  c.data.header = d.at("header").get<bool>();
  c.data.strict = d.at("strict").get<bool>();
  c.data.user_col = d.at("user_col").get<int>();
  c.data.item_col = d.at("item_col").get<int>();
  c.data.time_col = d.at("time_col").get<int>();
  c.data.min_count = d.at("min_count").get<int>();
  c.data.split = parse_split_kind(d.at("split").get<std::string>());
  c.data.seed = d.at("seed").get<std::uint64_t>();
  const auto& t = j.at("train");
  c.train.learning_rate = t.at("lr").get<double>();
  c.train.batch_size = t.at("batch_size").get<int>();
  c.train.eval_batch_size = t.at("eval_batch_size").get<int>();
  c.train.patience = t.at("patience").get<int>();
  c.train.max_epochs = t.at("max_epochs").get<int>();
  c.train.weight_decay = t.at("weight_decay").get<double>();
  c.train.grad_clip = t.at("grad_clip").get<double>();
  c.train.seed = t.at("seed").get<std::uint64_t>();
  c.train.threads = t.at("threads").get<int>();
  const auto& e = j.at("eval");
  c.eval.exclude_history = e.at("exclude_history").get<bool>();
  const auto sim = e.at("similarity").get<std::string>();
  if (sim != "dot" && sim != "cosine") throw ConfigError("eval.similarity must be dot or cosine");
  c.eval.cosine = sim == "cosine";
  c.eval.seed = e.at("seed").get<std::uint64_t>();
  c.eval.threads = e.at("threads").get<int>();
  c.eval.batch_size = e.at("batch_size").get<int>();
  c.eval.ks = e.at("ks").get<std::vector<int>>();
  c.run_dir = j.at("run").at("dir").get<std::string>();
}

namespace {

void collect_keys(const json& j, const std::string& prefix, std::vector<std::string>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      collect_keys(*it, key, out);
    } else {
      out.push_back(key);
    }
  }
}

json::json_pointer pointer_for(const std::string& dotted) {
  std::string p = "/" + dotted;
  std::replace(p.begin(), p.end(), '.', '/');
  return json::json_pointer(p);
}

json parse_like(const json& like, const std::string& key, const std::string& value) {
  try {
    if (like.is_boolean()) {
      if (value == "true" || value == "1") return true;
      if (value == "false" || value == "0") return false;
      throw ConfigError("expected true/false");
    }
    if (like.is_number_unsigned()) {
      if (!value.empty() && value[0] == '-') throw ConfigError("expected a non-negative integer");
      size_t pos = 0;
      const auto v = std::stoull(value, &pos);
      if (pos != value.size()) throw ConfigError("trailing characters");
      return v;
    }
    if (like.is_number_integer()) {
      size_t pos = 0;
      const auto v = std::stoll(value, &pos);
      if (pos != value.size()) throw ConfigError("trailing characters");
      return v;
    }
    if (like.is_number_float()) {
      size_t pos = 0;
      const double v = std::stod(value, &pos);
      if (pos != value.size()) throw ConfigError("trailing characters");
      return v;
    }
    if (like.is_array()) {
      json arr = json::array();
      std::stringstream ss(value);
      std::string part;
      while (std::getline(ss, part, ',')) arr.push_back(std::stoi(part));
      return arr;
    }
    return value;
  } catch (const ConfigError& e) {
    throw ConfigError("bad value '" + value + "' for " + key + ": " + e.what());
  } catch (const std::exception&) {
    throw ConfigError("bad value '" + value + "' for " + key);
  }
}

void finish(RunConfig& cfg, const json& j) {
  try {
    from_json(j, cfg);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  cfg.model.time_encoder.dim = cfg.model.dim;
}

}  // namespace

std::vector<std::string> config_keys() {
  json j = RunConfig{};
  std::vector<std::string> keys;
  collect_keys(j, "", keys);
  return keys;
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  json j = cfg;
  const auto ptr = pointer_for(key);
  if (!j.contains(ptr) || j.at(ptr).is_object()) throw ConfigError("unknown config key '" + key + "'");
  j[ptr] = parse_like(j.at(ptr), key, value);
  finish(cfg, j);
}

void merge_json(RunConfig& cfg, const json& doc) {
  if (!doc.is_object()) throw ConfigError("config document must be a JSON object");
  json j = cfg;
  std::vector<std::pair<std::string, json>> leaves;
  // Accept nested objects and dotted keys alike.
  std::function<void(const json&, const std::string&)> walk = [&](const json& node,
                                                                  const std::string& prefix) {
    for (auto it = node.begin(); it != node.end(); ++it) {
      const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
      if (it->is_object()) {
        walk(*it, key);
      } else {
        leaves.emplace_back(key, *it);
      }
    }
  };
  walk(doc, "");
  for (const auto& [key, value] : leaves) {
    const auto ptr = pointer_for(key);
    if (!j.contains(ptr) || j.at(ptr).is_object()) throw ConfigError("unknown config key '" + key + "'");
    const json& like = j.at(ptr);
    const bool ok = (like.is_number() && value.is_number()) ||
                    (like.is_boolean() && value.is_boolean()) ||
                    (like.is_string() && value.is_string()) || (like.is_array() && value.is_array());
    if (!ok) throw ConfigError("type mismatch for config key '" + key + "'");
    j[ptr] = value;
  }
  finish(cfg, j);
}

std::string env_name_for(const std::string& key) {
  std::string out = "PASREC_";
  for (char ch : key) {
    out.push_back(ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
  }
  return out;
}

void apply_env_overrides(RunConfig& cfg, const char* const* envp) {
  if (envp == nullptr) return;
  const auto keys = config_keys();
  for (const char* const* e = envp; *e != nullptr; ++e) {
    const char* eq = std::strchr(*e, '=');
    if (eq == nullptr) continue;
    const std::string name(*e, eq);
    if (name.rfind("PASREC_", 0) != 0) continue;
    bool matched = false;
    for (const auto& key : keys) {
      if (env_name_for(key) == name) {
        apply_override(cfg, key, std::string(eq + 1));
        matched = true;
        break;
      }
    }
    if (!matched) throw ConfigError("unknown environment override " + name);
  }
}

}  // namespace pasrec
