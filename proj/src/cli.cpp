#include "pasrec/cli.hpp"

#include <omp.h>

#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>

#include <CLI11.hpp>

#include "pasrec/synth.hpp"
#include "pasrec/trainer.hpp"

namespace pasrec::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for_current_exception(std::ostream& err) {
  try {
    throw;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const data::DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const train::NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kOther;
  } catch (...) {
    err << "error: unknown exception\n";
    return kOther;
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

RunConfig resolve_config(const std::string& config_file, const char* const* envp,
                         const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg;
  if (!config_file.empty()) merge_json(cfg, read_json(config_file));
  if (envp != nullptr) apply_env_overrides(cfg, envp);
  for (const auto& [key, value] : overrides) apply_override(cfg, key, value);
  cfg.model.time_encoder.dim = cfg.model.dim;
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

std::string ablation_label(const ModelConfig& m) {
  if (m.time_encoder.kind == TimeEncoderKind::AbsolutePosition) return "Base";
  return m.toi_enabled() ? "Base+TE+TP" : "Base+TE";
}

namespace {

json seeds_of(const RunConfig& cfg) {
  return {{"data", cfg.data.seed},
          {"init", cfg.model.init_seed},
          {"train", cfg.train.seed},
          {"eval", cfg.eval.seed},
          {"time_encoder", cfg.model.time_encoder.seed},
          {"diffusion", cfg.model.diffusion.seed}};
}

void echo_config(const RunConfig& cfg) {
  write_text(fs::path(cfg.run_dir) / "config.json", json(cfg).dump(2) + "\n");
}

const std::vector<data::SequenceSample>& split_of(const data::PreparedData& d, const std::string& split) {
  if (split == "test") return d.bundle.test;
  if (split == "valid") return d.bundle.valid;
  if (split == "train") return d.bundle.train;
  throw ConfigError("unknown split '" + split + "' (test, valid, train)");
}

data::PreparedData load_prepared(const RunConfig& cfg, const fs::path& snapshot) {
  if (snapshot.empty()) throw ConfigError("--snapshot is required");
  if (!fs::exists(snapshot)) throw data::DataError("snapshot not found: " + snapshot.string());
  data::PreparedData d = data::load_snapshot(snapshot);
  if (d.max_len != cfg.model.max_len) {
    throw ConfigError("snapshot windows have length " + std::to_string(d.max_len) + " but model.max_len is " +
                      std::to_string(cfg.model.max_len));
  }
  return d;
}

void write_report(const fs::path& dir, const eval::MetricsReport& r, json extra) {
  json j = eval::to_json(r);
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  write_text(dir / "metrics.json", j.dump(2) + "\n");
  write_text(dir / "toi_histogram.csv", eval::histogram_csv(eval::histogram(r.toi_cosine)));
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

std::string metric_columns(const eval::MetricsReport& r) {
  std::string out;
  for (int k : r.ks) out += "," + fmt(r.hr.at(k));
  for (int k : r.ks) out += "," + fmt(r.ndcg.at(k));
  return out;
}

std::string metric_header(const std::vector<int>& ks) {
  std::string out;
  for (int k : ks) out += ",H@" + std::to_string(k);
  for (int k : ks) out += ",N@" + std::to_string(k);
  return out;
}

TrainOutputs train_on(const RunConfig& cfg, const data::PreparedData& d, const fs::path& snapshot,
                      std::ostream& log) {
  const fs::path dir(cfg.run_dir);
  fs::create_directories(dir);
  echo_config(cfg);
  const std::string label = ablation_label(cfg.model);
  log << "[" << cfg.run_dir << "] configuration " << label << "\n";

  omp_set_num_threads(cfg.train.threads);
  PASRec model(cfg.model, d.vocab.item_count());
  EvalConfig valid_cfg = cfg.eval;
  valid_cfg.batch_size = cfg.train.eval_batch_size;
  std::ofstream train_log(dir / "train_log.tsv");
  train_log << "# configuration " << label << "\n";
  const train::FitResult fit = train::fit(model, d.bundle.train, cfg.train,
                                          train::metric_validator(d.bundle.valid, valid_cfg), &train_log);

  TrainOutputs out;
  out.checkpoint = dir / "checkpoint.bin";
  out.best_epoch = fit.best_epoch;
  out.best_metric = fit.best_metric;
  out.validations = fit.validations;
  save_checkpoint(model.to_checkpoint({{"configuration", label},
                                       {"vocab_hash", d.vocab.hash()},
                                       {"best_epoch", fit.best_epoch},
                                       {"seeds", seeds_of(cfg)}}),
                  out.checkpoint);
  out.test = eval::evaluate(model, d.bundle.test, cfg.eval);
  write_report(dir, out.test, {{"configuration", label}, {"split", "test"}});
  write_text(dir / "run.json", json{{"command", "train"},
                                    {"snapshot", fs::absolute(snapshot).string()},
                                    {"configuration", label},
                                    {"seeds", seeds_of(cfg)},
                                    {"best_epoch", fit.best_epoch},
                                    {"best_valid_N@10", fit.best_metric},
                                    {"validations", fit.validations},
                                    {"early_stopped", fit.early_stopped}}
                                       .dump(2) +
                                   "\n");
  log << "[" << cfg.run_dir << "] best epoch " << fit.best_epoch << " valid N@10 " << fmt(fit.best_metric)
      << " test " << eval::to_json(out.test).dump() << "\n";
  return out;
}

}  // namespace

data::PreparedData cmd_prepare(const RunConfig& cfg) {
  if (cfg.data.input.empty()) throw ConfigError("data.input is not set");
  if (!fs::exists(cfg.data.input)) throw data::DataError("input not found: " + cfg.data.input);
  const data::LoadResult loaded = data::load_events(cfg.data.input, data::LoadOptions::from_config(cfg.data));
  data::PreparedData d =
      data::prepare(loaded.events, cfg.data.min_count, cfg.model.max_len, cfg.data.split, cfg.data.seed);
  const fs::path dir(cfg.run_dir);
  fs::create_directories(dir);
  echo_config(cfg);
  data::save_snapshot(d, dir / "snapshot.json");
  json stats = data::stats_to_json(d.stats);
  stats["rows"] = loaded.rows;
  stats["skipped_rows"] = loaded.skipped;
  stats["train_samples"] = d.bundle.train.size();
  stats["valid_samples"] = d.bundle.valid.size();
  stats["test_samples"] = d.bundle.test.size();
  write_text(dir / "stats.json", stats.dump(2) + "\n");
  if (!loaded.warnings.empty()) {
    std::string w;
    for (const auto& line : loaded.warnings) w += line + "\n";
    write_text(dir / "warnings.txt", w);
  }
  return d;
}

TrainOutputs cmd_train(const RunConfig& cfg, const fs::path& snapshot, std::ostream& log) {
  return train_on(cfg, load_prepared(cfg, snapshot), snapshot, log);
}

eval::MetricsReport cmd_evaluate(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& snapshot,
                                 const std::string& split) {
  if (!fs::exists(checkpoint)) throw data::DataError("checkpoint not found: " + checkpoint.string());
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const PASRec model = PASRec::from_checkpoint(ckpt);
  RunConfig run = cfg;
  run.model = model.config();
  const data::PreparedData d = load_prepared(run, snapshot);
  if (ckpt.meta.contains("vocab_hash") && ckpt.meta.at("vocab_hash").get<std::uint64_t>() != d.vocab.hash()) {
    throw data::DataError("checkpoint was trained on a different vocabulary");
  }
  if (model.item_count() != d.vocab.item_count()) throw data::DataError("checkpoint item count differs from snapshot");
  const eval::MetricsReport r = eval::evaluate(model, split_of(d, split), cfg.eval);
  fs::create_directories(cfg.run_dir);
  write_report(cfg.run_dir, r, {{"configuration", ablation_label(model.config())}, {"split", split}});
  return r;
}

std::vector<std::pair<std::string, eval::MetricsReport>> cmd_ablate(const RunConfig& cfg, const fs::path& snapshot,
                                                                    std::ostream& log) {
  if (cfg.model.time_encoder.kind == TimeEncoderKind::AbsolutePosition) {
    throw ConfigError("ablate needs a timestamp encoder (time_encoder.kind)");
  }
  if (!cfg.model.toi_enabled()) throw ConfigError("ablate needs the ToI path enabled (toi.gamma > 0 or loss.eta < 1)");
  const data::PreparedData d = load_prepared(cfg, snapshot);
  RunConfig base = cfg;
  base.model.time_encoder.kind = TimeEncoderKind::AbsolutePosition;
  RunConfig te = cfg;
  te.model.loss.eta = 1.0;
  te.model.toi.gamma = 0.0;
  std::vector<std::pair<std::string, eval::MetricsReport>> rows;
  std::string table = "configuration" + metric_header(cfg.eval.ks) + "\n";
  for (RunConfig run : {base, te, cfg}) {
    const std::string label = ablation_label(run.model);
    run.run_dir = (fs::path(cfg.run_dir) / label).string();
    rows.emplace_back(label, train_on(run, d, snapshot, log).test);
    table += label + metric_columns(rows.back().second) + "\n";
  }
  write_text(fs::path(cfg.run_dir) / "ablation.csv", table);
  return rows;
}

std::vector<SweepRow> cmd_sweep(const RunConfig& cfg, const fs::path& snapshot, const std::vector<double>& gammas,
                                const std::vector<double>& etas, int parallel, std::ostream& log) {
  if (gammas.empty() || etas.empty()) throw ConfigError("sweep grids must be non-empty");
  for (double v : gammas) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("gamma grid values must lie in [0,1]");
  }
  for (double v : etas) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("eta grid values must lie in [0,1]");
  }
  if (parallel < 1) throw ConfigError("--parallel must be >= 1");
  const data::PreparedData d = load_prepared(cfg, snapshot);

  std::vector<SweepRow> rows;
  std::vector<RunConfig> runs;
  for (double g : gammas) {
    for (double e : etas) {
      RunConfig run = cfg;
      run.model.toi.gamma = g;
      run.model.loss.eta = e;
      run.run_dir = (fs::path(cfg.run_dir) / ("gamma" + fmt(g) + "_eta" + fmt(e))).string();
      rows.push_back({g, e, {}});
      runs.push_back(std::move(run));
    }
  }
  std::mutex log_mutex;
  std::vector<std::exception_ptr> errors(runs.size());
#pragma omp parallel for schedule(dynamic) num_threads(parallel)
  for (long i = 0; i < static_cast<long>(runs.size()); ++i) {
    try {
      std::ostringstream local;
      rows[static_cast<size_t>(i)].report = train_on(runs[static_cast<size_t>(i)], d, snapshot, local).test;
      std::lock_guard<std::mutex> lock(log_mutex);
      log << local.str();
    } catch (...) {
      errors[static_cast<size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::string table = "gamma,eta,configuration" + metric_header(cfg.eval.ks) + "\n";
  for (size_t i = 0; i < rows.size(); ++i) {
    table += fmt(rows[i].gamma) + "," + fmt(rows[i].eta) + "," + ablation_label(runs[i].model) +
             metric_columns(rows[i].report) + "\n";
  }
  write_text(fs::path(cfg.run_dir) / "sweep.csv", table);
  return rows;
}

void cmd_synth(const std::string& preset, std::uint64_t seed, int users, const fs::path& out_dir) {
  synth::SynthSpec spec;
  if (preset == "acceptance") {
    spec = synth::acceptance_spec(seed, users);
  } else if (preset == "toi") {
    spec = synth::toi_spec(seed, users);
  } else {
    throw ConfigError("unknown synth preset '" + preset + "' (acceptance, toi)");
  }
  const synth::Generated g = synth::generate(spec);
  std::string csv = "user,item,timestamp\n";
  for (const auto& e : g.events) csv += e.user_id + "," + e.item_id + "," + std::to_string(e.timestamp) + "\n";
  write_text(out_dir / "events.csv", csv);
  write_text(out_dir / "spec.json", synth::to_json(spec).dump(2) + "\n");
}

json cmd_gradcheck(const RunConfig& cfg, const fs::path& snapshot, int batch) {
  if (batch < 2) throw ConfigError("gradcheck batch must be >= 2");
  data::PreparedData d;
  if (snapshot.empty()) {
    const synth::Generated g = synth::generate(synth::acceptance_spec(cfg.data.seed, 40));
    d = data::prepare(g.events, 1, cfg.model.max_len, SplitKind::LOO, cfg.data.seed);
  } else {
    d = load_prepared(cfg, snapshot);
  }
  if (d.bundle.train.size() < static_cast<size_t>(batch)) throw data::DataError("not enough training samples");
  const PASRec model(cfg.model, d.vocab.item_count());
  std::vector<size_t> idx(static_cast<size_t>(batch));
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const Batch b = make_batch(d.bundle.train, idx);
  std::mt19937_64 rng(cfg.train.seed);
  const StepDraws draws = draw_step(model.config(), b.size, b.len, rng);
  const train::GradCheckReport r = train::grad_check(model, b, draws);
  json groups = json::object();
  for (const auto& [group, err] : r.max_rel_error) groups[group] = {{"max_rel_error", err}, {"checked", r.checked.at(group)}};
  return {{"groups", groups}, {"max_rel_error", r.max_error()}, {"configuration", ablation_label(cfg.model)}};
}

namespace {

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ',')) {
    try {
      size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad grid value '" + item + "'");
    }
  }
  return out;
}

/// Config-bearing options shared by every subcommand: --config, --set k=v,
/// --run-dir and one --<dotted.key> flag per config key.
struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;
  std::string run_dir;
  std::map<std::string, std::string> keyed;
  std::vector<std::pair<std::string, CLI::Option*>> options;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "JSON config file");
    app->add_option("--set", sets, "key=value override (repeatable)");
    app->add_option("--run-dir", run_dir, "output directory (run.dir)");
    for (const auto& key : config_keys()) {
      if (key == "run.dir") continue;
      options.emplace_back(key, app->add_option("--" + key, keyed[key]));
    }
  }

  RunConfig resolve(const char* const* envp) const {
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) overrides.emplace_back(key, keyed.at(key));
    }
    if (!run_dir.empty()) overrides.emplace_back("run.dir", run_dir);
    return resolve_config(file, envp, overrides);
  }
};

}  // namespace

int main(int argc, char** argv, const char* const* envp, std::ostream& out, std::ostream& err) {
  CLI::App app{"pasrec: time-aware diffusion sequential recommender"};
  app.require_subcommand(1);

  ConfigFlags prepare_flags, train_flags, eval_flags, ablate_flags, sweep_flags, grad_flags;
  std::string snapshot, checkpoint, split = "test", gamma_grid = "0.8", eta_grid = "0.2", preset = "acceptance";
  std::string out_dir = "synth";
  std::uint64_t synth_seed = 1;
  int users = 500, parallel = 1, grad_batch = 4;

  CLI::App* prepare = app.add_subcommand("prepare", "ingest, filter, split and snapshot a dataset");
  prepare_flags.attach(prepare);
  CLI::App* synth_cmd = app.add_subcommand("synth", "write a synthetic dataset and its spec");
  synth_cmd->add_option("--preset", preset, "acceptance or toi");
  synth_cmd->add_option("--seed", synth_seed);
  synth_cmd->add_option("--users", users);
  synth_cmd->add_option("--out", out_dir, "output directory");
  CLI::App* train_cmd = app.add_subcommand("train", "train with early stopping and report on test");
  train_flags.attach(train_cmd);
  train_cmd->add_option("--snapshot", snapshot)->required();
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint");
  eval_flags.attach(eval_cmd);
  eval_cmd->add_option("--snapshot", snapshot)->required();
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  eval_cmd->add_option("--split", split, "test, valid or train");
  CLI::App* ablate = app.add_subcommand("ablate", "Base / Base+TE / Base+TE+TP on one snapshot");
  ablate_flags.attach(ablate);
  ablate->add_option("--snapshot", snapshot)->required();
  CLI::App* sweep = app.add_subcommand("sweep", "gamma x eta grid");
  sweep_flags.attach(sweep);
  sweep->add_option("--snapshot", snapshot)->required();
  sweep->add_option("--gamma", gamma_grid, "comma-separated gamma values");
  sweep->add_option("--eta", eta_grid, "comma-separated eta values");
  sweep->add_option("--parallel", parallel, "independent runs at a time");
  CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference gradient check");
  grad_flags.attach(grad);
  grad->add_option("--snapshot", snapshot);
  grad->add_option("--batch", grad_batch);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  }

  try {
    if (prepare->parsed()) {
      const RunConfig cfg = prepare_flags.resolve(envp);
      const data::PreparedData d = cmd_prepare(cfg);
      out << data::stats_to_json(d.stats).dump() << "\n";
    } else if (synth_cmd->parsed()) {
      cmd_synth(preset, synth_seed, users, out_dir);
      out << "wrote " << (fs::path(out_dir) / "events.csv").string() << "\n";
    } else if (train_cmd->parsed()) {
      const RunConfig cfg = train_flags.resolve(envp);
      const TrainOutputs r = cmd_train(cfg, snapshot, err);
      out << eval::to_json(r.test).dump() << "\n";
    } else if (eval_cmd->parsed()) {
      const RunConfig cfg = eval_flags.resolve(envp);
      const eval::MetricsReport r = cmd_evaluate(cfg, checkpoint, snapshot, split);
      json j = eval::to_json(r);
      j.erase("toi_cosine");
      out << j.dump() << "\n";
    } else if (ablate->parsed()) {
      const RunConfig cfg = ablate_flags.resolve(envp);
      for (const auto& [label, r] : cmd_ablate(cfg, snapshot, err)) {
        json j = eval::to_json(r);
        j.erase("toi_cosine");
        out << label << " " << j.dump() << "\n";
      }
    } else if (sweep->parsed()) {
      const RunConfig cfg = sweep_flags.resolve(envp);
      const auto rows = cmd_sweep(cfg, snapshot, parse_grid(gamma_grid), parse_grid(eta_grid), parallel, err);
      out << rows.size() << " runs, table in " << (fs::path(cfg.run_dir) / "sweep.csv").string() << "\n";
    } else if (grad->parsed()) {
      const RunConfig cfg = grad_flags.resolve(envp);
      const json report = cmd_gradcheck(cfg, snapshot, grad_batch);
      out << report.dump(2) << "\n";
      if (!(report.at("max_rel_error").get<double>() <= 1e-4)) {
        err << "numeric failure: gradient check above 1e-4\n";
        return kNumeric;
      }
    }
  } catch (...) {
    return exit_code_for_current_exception(err);
  }
  return kOk;
}

}  // namespace pasrec::cli
