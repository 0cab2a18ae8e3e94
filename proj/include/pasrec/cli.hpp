#pragma once

// Subcommand implementations behind the pasrec executable. Each command reads
// a resolved RunConfig and writes its outputs into cfg.run_dir.

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pasrec/config.hpp"
#include "pasrec/datastore.hpp"
#include "pasrec/evaluator.hpp"

namespace pasrec::cli {

enum ExitCode : int { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kNumeric = 4 };

/// Maps the current exception (call inside a catch block) to an exit code and
/// writes a one-line diagnostic to `err`.
int exit_code_for_current_exception(std::ostream& err);

/// Defaults, then the JSON file (if any), then PASREC_* variables, then
/// `key=value` flag overrides. Later sources win.
RunConfig resolve_config(const std::string& config_file, const char* const* envp,
                         const std::vector<std::pair<std::string, std::string>>& overrides);

/// "Base", "Base+TE" or "Base+TE+TP", from the encoder kind and the ToI coupling.
std::string ablation_label(const ModelConfig& m);

void write_text(const std::filesystem::path& path, const std::string& text);
nlohmann::json read_json(const std::filesystem::path& path);

/// Loads cfg.data.input, filters, splits and writes snapshot.json and stats.json.
data::PreparedData cmd_prepare(const RunConfig& cfg);

struct TrainOutputs {
  std::filesystem::path checkpoint;
  int best_epoch = 0;
  double best_metric = 0.0;
  int validations = 0;
  eval::MetricsReport test;
};

/// Trains on the snapshot's train split with early stopping on valid, saves
/// checkpoint.bin, train_log.tsv, config.json and run.json, then reports on test.
TrainOutputs cmd_train(const RunConfig& cfg, const std::filesystem::path& snapshot, std::ostream& log);

/// Evaluates a checkpoint on one split ("test" or "valid") of the snapshot and
/// writes metrics.json plus toi_histogram.csv.
eval::MetricsReport cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                                 const std::filesystem::path& snapshot, const std::string& split);

/// Base, Base+TE and Base+TE+TP trained on one snapshot; writes ablation.csv.
std::vector<std::pair<std::string, eval::MetricsReport>> cmd_ablate(const RunConfig& cfg,
                                                                    const std::filesystem::path& snapshot,
                                                                    std::ostream& log);

struct SweepRow {
  double gamma = 0.0;
  double eta = 0.0;
  eval::MetricsReport report;
};

/// Cartesian product of the gamma and eta grids, each run in its own
/// subdirectory; `parallel` independent runs at a time. Writes sweep.csv.
std::vector<SweepRow> cmd_sweep(const RunConfig& cfg, const std::filesystem::path& snapshot,
                                const std::vector<double>& gammas, const std::vector<double>& etas, int parallel,
                                std::ostream& log);

/// Writes events.csv (header user,item,timestamp) and spec.json for a preset
/// ("acceptance" or "toi").
void cmd_synth(const std::string& preset, std::uint64_t seed, int users, const std::filesystem::path& out_dir);

/// Finite-difference check of the configured model on a tiny batch drawn from
/// the snapshot (or a small synthetic set when no snapshot is given).
nlohmann::json cmd_gradcheck(const RunConfig& cfg, const std::filesystem::path& snapshot, int batch);

/// Full argument parsing and dispatch; returns the process exit code.
int main(int argc, char** argv, const char* const* envp, std::ostream& out, std::ostream& err);

}  // namespace pasrec::cli
