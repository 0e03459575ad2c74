#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scar/corpus.hpp"
#include "scar/model.hpp"
#include "scar/tensor.hpp"

namespace scar {

/// Patches of several records stacked row-wise, N = records × cells.
struct TokenBatch {
  Tensor patches;
  std::vector<std::uint8_t> valid;
  std::size_t records = 0;
  std::size_t cells = 0;
};

TokenBatch make_token_batch(std::span<const SignalRecord* const> records, std::size_t patch_length);
TokenBatch make_token_batch(std::span<const SignalRecord> records, std::size_t patch_length);

struct Prediction {
  std::vector<double> scores;         // cosine similarity per class
  std::vector<double> probabilities;  // sigmoid(score / temperature)
};

/// l2-normalised class prompt embeddings, K×d.
Tensor prompt_embeddings(const ScarParams& params, const ModelConfig& cfg, const CorpusConfig& corpus);

/// Per class k: whether prompt k is closer in cosine to the mean report
/// embedding of class-k records than to that of any other class. Classes
/// without a positive record are reported as false.
struct PromptConsistency {
  std::vector<std::uint8_t> correct;
  double accuracy = 0.0;
};
PromptConsistency prompt_self_consistency(const ScarParams& params, const ModelConfig& cfg,
                                          const CorpusConfig& corpus, std::span<const SignalRecord> records);

/// l2-normalised signal embeddings (masker discarded, pooling over valid
/// cells), n×d. Throws EmptyVisibleSetError when a record has no valid cell.
Tensor embed_records(const ScarParams& params, const ModelConfig& cfg,
                     std::span<const SignalRecord> records);

/// Cosine scores n×K.
Tensor zero_shot_scores(const ScarParams& params, const ModelConfig& cfg, const Tensor& prompts,
                        std::span<const SignalRecord> records);
Prediction zero_shot_predict(const SignalRecord& record, const ScarParams& params,
                             const ModelConfig& cfg, const Tensor& prompts);
std::vector<double> score_probabilities(std::span<const double> scores, double temperature);

/// Pooling weights (alpha) over the L×S cells of one record at inference.
std::vector<double> pooling_weights(const ScarParams& params, const ModelConfig& cfg,
                                    const SignalRecord& record);
/// Masker logits over the L×S cells of one record (diagnostics only).
std::vector<double> masker_cell_logits(const ScarParams& params, const ModelConfig& cfg,
                                       const SignalRecord& record);

/// Stacked multi-label targets, n×K row-major.
std::vector<std::uint8_t> stack_labels(std::span<const SignalRecord> records);

/// CSV: record_id,mask_id,score_0..score_{K-1}.
std::string prediction_csv(std::span<const SignalRecord> records, std::span<const std::string> mask_ids,
                           const Tensor& scores);

struct ProbeResult {
  double fraction = 0.0;
  std::size_t train_records = 0;
  std::optional<double> macro_auroc;  // empty when no class is evaluable
  std::size_t skipped_classes = 0;
};

struct ProbeConfig {
  std::vector<double> fractions{0.01, 0.10, 1.0};
  std::size_t epochs = 500;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
};

/// Class-stratified subset of `fraction` of the records (at least one
/// positive per class when available).
std::vector<std::size_t> stratified_subset(std::span<const SignalRecord> records, double fraction,
                                           std::uint64_t seed);

/// Logistic-regression head on frozen embeddings; macro-AUROC on `test`.
std::vector<ProbeResult> linear_probe(const ScarParams& params, const ModelConfig& cfg,
                                      std::span<const SignalRecord> train,
                                      std::span<const SignalRecord> test, const ProbeConfig& probe);

}  // namespace scar
