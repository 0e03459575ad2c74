#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scar/corpus.hpp"
#include "scar/graph.hpp"
#include "scar/missingness.hpp"
#include "scar/model.hpp"

namespace scar {

/// Raised by the divergence guard when a loss turns non-finite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Masking { adversarial, random };

const char* masking_name(Masking m);
Masking masking_from_name(const std::string& s);

struct TrainConfig {
  double lambda_cons = 1.0;
  double lambda_mask = 10.0;
  double learning_rate = 1e-4;
  std::size_t batch_size = 16;
  std::size_t epochs = 50;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t masker_steps = 1;   // masker updates per alternation
  std::size_t encoder_steps = 1;  // encoder-side updates per alternation
  std::uint64_t seed = 7;
  Masking masking = Masking::adversarial;
  /// When false the masker maximises L_align only.
  bool masker_maximizes_consistency = true;
  bool augment = true;
  /// Evaluate zero-shot validation AUROC every this many epochs (0 = never).
  std::size_t val_every = 1;
  /// Save a checkpoint every this many epochs into the run directory (0 = final only).
  std::size_t checkpoint_every = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Named ablation variants.
struct Variant {
  std::string name;
  Masking masking;
  Pooling pooling;
  bool consistency;
};

const std::vector<Variant>& variants();
/// Throws ConfigError listing the valid names.
const Variant& variant_by_name(const std::string& name);
/// Applies the variant's toggles; lambda_cons becomes 0 when consistency is off
/// and 1 (or the configured positive value) when on.
void apply_variant(const Variant& v, ModelConfig& model, TrainConfig& train);

// ---- losses ---------------------------------------------------------------

/// InfoNCE over a batch: rows of z and u are l2-normalised inside.
ag::Var loss_align(ag::Var z, ag::Var u, double temperature);
/// mean over rows of 1 - cos(z_m, sg(z_full)).
ag::Var loss_cons(ag::Var z_masked, ag::Var z_full);
/// (mean(g) - rho)^2.
ag::Var loss_budget(ag::Var gates, double budget);

// ---- batches and steps ----------------------------------------------------

/// Everything one step needs, fixed before the forward pass.
struct StepBatch {
  Tensor patches;                    // augmented view, N×P
  std::vector<std::uint8_t> valid;   // N
  Tensor clean_patches;              // full view, N×P
  std::vector<std::uint8_t> clean_valid;
  std::vector<std::size_t> report_ids;  // records × report_length
  std::size_t records = 0;
  std::size_t cells = 0;
  std::size_t report_length = 0;
};

StepBatch make_step_batch(std::span<const SignalRecord* const> augmented,
                          std::span<const SignalRecord* const> clean, const CorpusConfig& corpus);

struct StepNoise {
  Tensor gumbel;          // N×1, used for adversarial gates
  Tensor random_gates;    // N×1, used for random masking
};

StepNoise draw_step_noise(const StepBatch& batch, double budget, std::uint64_t seed);

struct LossTerms {
  ag::Var align;
  ag::Var cons;
  ag::Var budget;
  ag::Var total;  // align + lambda_cons*cons + lambda_mask*budget
  ag::Var gates;
  double mean_gate = 0.0;
};

/// Forward pass of the full objective on a bound parameter set. When
/// `freeze_gates` is set the gates enter the graph behind stop_gradient.
LossTerms forward_losses(const BoundParams& p, const StepBatch& batch, const StepNoise& noise,
                         const ModelConfig& model, const TrainConfig& train,
                         double mask_temperature, bool freeze_gates);

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::uint64_t t = 0;
};

/// Applies one Adam update to the named parameters from their gradients.
void adam_update(ScarParams& params, const std::map<std::string, Tensor>& grads, AdamState& state,
                 const TrainConfig& cfg);

struct StepReport {
  double align = 0.0;
  double cons = 0.0;
  double budget = 0.0;
  double total = 0.0;
  double objective = 0.0;  // the quantity that was descended
  double mean_gate = 0.0;
};

/// One Adam step on the masker, descending
/// -(L_align + lambda_cons*L_cons) + lambda_mask*L_budget.
StepReport masker_step(ScarParams& params, AdamState& state, const StepBatch& batch,
                       const StepNoise& noise, const ModelConfig& model, const TrainConfig& train,
                       double mask_temperature);
/// One Adam step on encoder, selector and text groups, descending
/// L_align + lambda_cons*L_cons with the gates frozen.
StepReport encoder_step(ScarParams& params, AdamState& state, const StepBatch& batch,
                        const StepNoise& noise, const ModelConfig& model, const TrainConfig& train,
                        double mask_temperature);

/// Loss terms without any update.
StepReport evaluate_losses(const ScarParams& params, const StepBatch& batch, const StepNoise& noise,
                           const ModelConfig& model, const TrainConfig& train,
                           double mask_temperature);

// ---- training loop --------------------------------------------------------

struct EpochMetrics {
  std::size_t epoch = 0;
  double align = 0.0;
  double cons = 0.0;
  double budget = 0.0;
  double mean_gate = 0.0;
  std::optional<double> val_auroc;
};

std::string metrics_csv(std::span<const EpochMetrics> history);

struct TrainResult {
  ScarParams params;
  std::vector<EpochMetrics> history;
  std::uint64_t steps = 0;
};

struct TrainHooks {
  std::function<void(const EpochMetrics&)> on_epoch;
  /// Directory for periodic checkpoints (used with checkpoint_every).
  std::optional<std::filesystem::path> checkpoint_dir;
};

TrainResult train(const Corpus& corpus, const ModelConfig& model, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});

/// Mean gate over the valid cells of `records`, with fresh Gumbel noise at
/// the final masking temperature.
double validation_mean_gate(const ScarParams& params, const ModelConfig& model,
                            std::span<const SignalRecord> records, std::uint64_t seed);

/// Mean L_align on `records` with the trained encoder frozen, once with the
/// masker's gates and once with budget-matched random gates.
struct AdversarialityReport {
  double masker_align = 0.0;
  double random_align = 0.0;
};
AdversarialityReport masker_adversariality(const ScarParams& params, const ModelConfig& model,
                                           const CorpusConfig& corpus,
                                           std::span<const SignalRecord> records,
                                           std::size_t batch_size, std::uint64_t seed);

}  // namespace scar
