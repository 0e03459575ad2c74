#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scar/corpus.hpp"
#include "scar/metrics.hpp"
#include "scar/missingness.hpp"
#include "scar/model.hpp"

namespace scar {

struct ReferenceConfig {
  std::size_t epochs = 80;
  std::size_t batch_size = 32;
  double learning_rate = 3e-3;
  double quality_gate = 0.9;
  std::uint64_t seed = 11;
};

void to_json(nlohmann::json& j, const ReferenceConfig& c);
void from_json(const nlohmann::json& j, ReferenceConfig& c);

/// Supervised full-view classifier: token encoder, mean pool over valid
/// cells, linear multi-label head.
struct ReferenceModel {
  ModelConfig config;  // geometry and encoder sizes
  std::size_t num_classes = 0;
  ScarParams params;   // enc.* plus head.w (d×K) and head.b (K)
  std::uint64_t seed = 0;
  double clean_test_auroc = 0.0;

  /// Sigmoid probabilities, n×K.
  Tensor predict(std::span<const SignalRecord> records) const;
  /// Throws DependencyError when the clean-test AUROC is below the gate.
  void require_quality(double gate) const;
};

/// Trains with binary cross-entropy on the clean train split and records
/// the clean-test macro-AUROC.
ReferenceModel train_reference(const Corpus& corpus, const ReferenceConfig& cfg);

nlohmann::json reference_to_json(const ReferenceModel& ref);
ReferenceModel reference_from_json(const nlohmann::json& j);
void save_reference(const ReferenceModel& ref, const std::filesystem::path& path);
ReferenceModel load_reference(const std::filesystem::path& path);

/// Impact of every candidate mask on one record under the reference.
ImpactFn reference_impact(const ReferenceModel& ref, AgreementKind kind = AgreementKind::mean_abs);

struct EvalConfig {
  MissingnessConfig missingness = MissingnessConfig::evaluation();
  /// When set, base masks are drawn at exactly this masked-sample fraction.
  std::optional<double> budget;
  std::size_t candidates = 16;
  std::uint64_t seed = 99;
  AgreementKind agreement = AgreementKind::mean_abs;
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

/// Condition labels of the decomposition table, in order.
inline constexpr const char* kConditionNames[] = {"Lead-only", "Temporal-only", "Joint-Rand.",
                                                  "Joint-Hard"};

/// Per-record masks for the four conditions. Joint-Hard is chosen among
/// equal-budget relocations of the Joint-Rand mask.
struct EvalMasks {
  std::vector<MaskSpec> lead_only;
  std::vector<MaskSpec> temporal_only;
  std::vector<MaskSpec> joint_rand;
  std::vector<MaskSpec> joint_hard;
  std::vector<std::size_t> hard_index;  // winning candidate per record

  const std::vector<MaskSpec>& condition(std::size_t c) const;
};

EvalMasks build_eval_masks(std::span<const SignalRecord> records, const Geometry& geometry,
                           const ReferenceModel& ref, const EvalConfig& cfg);

struct ConditionResult {
  std::string name;
  double auroc = 0.0;
  std::optional<double> cmrs;
  double mean_impact = 0.0;
  double mean_severity = 0.0;
  std::vector<CmrsRow> ledger;
  Tensor scores;  // method cosine scores n×K
};

struct DecompositionTable {
  double clean_auroc = 0.0;
  std::vector<ConditionResult> conditions;  // ordered as kConditionNames

  const ConditionResult& at(const std::string& name) const;
};

/// Scores the method on clean and masked test records and builds one CMRS
/// ledger per condition.
DecompositionTable decompose_by_missingness(const ScarParams& params, const ModelConfig& model,
                                            const CorpusConfig& corpus,
                                            std::span<const SignalRecord> records,
                                            const ReferenceModel& ref, const EvalMasks& masks,
                                            const EvalConfig& cfg);

std::string decomposition_csv(const DecompositionTable& t);
std::string decomposition_text(const DecompositionTable& t);
/// Two-column-pair table: {AUROC, CMRS} x {Rand, Hard} from the joint conditions.
std::string zeroshot_csv(const DecompositionTable& t);
std::string zeroshot_text(const DecompositionTable& t);

/// CMRS of the same method under references trained with different seeds.
struct SensitivityRow {
  std::uint64_t reference_seed = 0;
  double reference_auroc = 0.0;
  std::optional<double> cmrs_rand;
  std::optional<double> cmrs_hard;
};

std::vector<SensitivityRow> reference_sensitivity(const ScarParams& params, const ModelConfig& model,
                                                  const Corpus& corpus, const ReferenceConfig& base,
                                                  std::span<const std::uint64_t> seeds,
                                                  const EvalConfig& cfg);
std::string sensitivity_csv(std::span<const SensitivityRow> rows);

}  // namespace scar
