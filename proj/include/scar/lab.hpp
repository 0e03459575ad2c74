#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scar/corpus.hpp"
#include "scar/evaluation.hpp"
#include "scar/inference.hpp"
#include "scar/model.hpp"
#include "scar/training.hpp"

namespace scar {

/// Everything a run needs; a run directory holds the exact copy that produced it.
struct RunConfig {
  CorpusConfig corpus;
  ModelConfig model;
  TrainConfig train;
  ReferenceConfig reference;
  EvalConfig eval;
  ProbeConfig probe;
  std::string variant = "Full Model";
  std::vector<double> sweep_lambda_cons{0.5, 1.0};
  std::vector<double> sweep_lambda_mask{1.0, 10.0};
  std::vector<std::uint64_t> reference_seeds{11, 12, 13};
  std::size_t plot_records = 3;
  std::string corpus_dir;  // empty: generated inside the run directory
  std::string out;
  std::uint64_t seed = 7;

  /// Pushes the global seed into the training and probe settings and checks
  /// every section.
  void resolve();
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Unknown top-level keys are rejected.
void from_json(const nlohmann::json& j, RunConfig& c);
void to_json(nlohmann::json& j, const ProbeConfig& c);
void from_json(const nlohmann::json& j, ProbeConfig& c);

/// Throws ConfigError when the file is missing or malformed.
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& cfg, const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// ---- commands -----------------------------------------------------------------

struct GenResult {
  std::size_t records = 0;
  std::string manifest_hash;
};
GenResult cmd_gen(const RunConfig& cfg, const std::filesystem::path& out);

/// Loads the configured corpus; throws DependencyError when it is absent.
Corpus load_run_corpus(const RunConfig& cfg);

struct TrainRun {
  RunConfig config;
  TrainResult result;
};
TrainRun cmd_train(RunConfig cfg, const std::filesystem::path& out, bool verbose = true);

enum class EvalMode { zeroshot, probe, cmrs, decompose };
EvalMode eval_mode_from_name(const std::string& s);

struct EvalOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> budget;
  std::optional<std::size_t> candidates;
};

/// Writes the mode's CSV and text files into the run directory and
/// returns the aligned-text summary.
std::string cmd_eval(const std::filesystem::path& run_dir, EvalMode mode, const EvalOverrides& ov = {});

/// Loads, or trains and caches, the reference model of a run directory.
ReferenceModel run_reference(const std::filesystem::path& run_dir, const RunConfig& cfg,
                             const Corpus& corpus, std::uint64_t seed);

std::string cmd_sweep(RunConfig cfg, const std::filesystem::path& out, bool verbose = true);

/// Returns the written file names.
std::vector<std::string> cmd_plot(const std::filesystem::path& run_dir,
                                  std::optional<std::uint64_t> seed = std::nullopt);

}  // namespace scar
