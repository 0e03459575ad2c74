#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scar/corpus.hpp"
#include "scar/graph.hpp"
#include "scar/tensor.hpp"

namespace scar {

enum class Pooling { selector, mean };

struct ModelConfig {
  std::size_t embed_dim = 32;
  std::vector<std::size_t> encoder_hidden{64};
  std::vector<std::size_t> masker_hidden{32};
  std::vector<std::size_t> selector_hidden{32};
  std::size_t text_hidden = 64;
  double temperature = 0.07;
  double mask_temp_start = 1.0;
  double mask_temp_end = 0.3;
  double budget = 0.3;
  Pooling pooling = Pooling::selector;

  // Input geometry, copied from the corpus the model is built for.
  std::size_t patch_length = 50;
  std::size_t vocab_size = 64;

  void validate() const;
  /// Linear anneal of the masking temperature over training progress in [0,1].
  double mask_temperature(double progress) const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

ModelConfig model_config_for(const CorpusConfig& corpus, ModelConfig base = {});

/// Owner groups for the min-max split. Encoder, selector and text minimise;
/// the masker maximises.
enum class ParamGroup { encoder, masker, selector, text };

const char* group_name(ParamGroup g);

struct Param {
  std::string name;
  ParamGroup group;
  Tensor value;
};

struct ScarParams {
  std::vector<Param> params;

  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  /// Order-sensitive checksum of every value in a group.
  std::string checksum(ParamGroup g) const;
};

ScarParams init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Parameters bound to a tape as leaves; only groups listed as trainable
/// are differentiable.
class BoundParams {
 public:
  BoundParams(ag::Tape& tape, const ScarParams& params, std::span<const ParamGroup> trainable);
  ag::Var operator()(const std::string& name) const;
  const std::vector<std::pair<std::string, ag::Var>>& vars() const { return vars_; }
  ag::Tape& tape() const { return *tape_; }

 private:
  ag::Tape* tape_;
  std::vector<std::pair<std::string, ag::Var>> vars_;
};

// ---- forward pieces -------------------------------------------------------
// Token tensors are stacked over records: N = records × cells rows, and
// `segment` = cells per record.

/// h = phi_tok(x) applied row-wise to N×P patches.
ag::Var encode_tokens(const BoundParams& p, ag::Var patches);
/// f_mask(h), N×1.
ag::Var masker_logits(const BoundParams& p, ag::Var tokens);
/// g = sigmoid((logit + noise) / tau_m); cells not valid are forced to 1.
ag::Var adversarial_gates(ag::Var logits, const Tensor& noise, double mask_temperature,
                          std::span<const std::uint8_t> cell_valid);
/// Diagnostic hard gates 1[f_mask(h) > 0], with invalid cells forced to 1.
std::vector<std::uint8_t> hard_gates(const Tensor& logits, std::span<const std::uint8_t> cell_valid);
/// h_hat = (1 - g) * h.
ag::Var mask_tokens(ag::Var tokens, ag::Var gates);
/// f_sel(h_hat), N×1.
ag::Var selector_scores(const BoundParams& p, ag::Var tokens);

struct Pooled {
  ag::Var embedding;  // records × d
  ag::Var weights;    // N×1 aggregation weights (alpha)
};

/// Softmax (or uniform, for mean pooling) weights over the visible set,
/// followed by the weighted sum. Throws EmptyVisibleSetError when a record
/// has no visible cell.
Pooled select_and_pool(const BoundParams& p, ag::Var tokens, std::span<const std::uint8_t> visible,
                       std::size_t segment, Pooling pooling);
/// Selector-free mean over valid cells.
ag::Var full_view_embed(ag::Var tokens, std::span<const std::uint8_t> cell_valid,
                        std::size_t segment);
/// Bag-of-tokens report encoder; reports are stacked row-major, each of
/// `report_length` ids. Pads are excluded from the mean.
ag::Var encode_report(const BoundParams& p, std::span<const std::size_t> ids,
                      std::size_t report_length);

/// Visible set used during training: g < 0.5 and cell valid.
std::vector<std::uint8_t> training_visible_set(const Tensor& gates,
                                               std::span<const std::uint8_t> cell_valid);

// ---- checkpoint -----------------------------------------------------------

struct Checkpoint {
  ModelConfig config;
  ScarParams params;
  std::uint64_t step = 0;
};

nlohmann::json checkpoint_to_json(const Checkpoint& ck);
/// Validates every tensor shape against the config.
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace scar
