#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scar/corpus.hpp"

namespace scar {

class DependencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class MaskKind { lead_only, temporal_only, joint };

const char* mask_kind_name(MaskKind k);
MaskKind mask_kind_from_name(const std::string& s);

/// Dropout parameters. Evaluation and pretraining use different defaults.
struct MissingnessConfig {
  double lead_drop_prob = 0.1;
  double span_ratio_min = 0.05;
  double span_ratio_max = 0.20;

  static MissingnessConfig evaluation() { return {0.1, 0.05, 0.20}; }
  static MissingnessConfig pretraining() { return {0.2, 0.05, 0.10}; }
};

struct Geometry {
  std::size_t num_leads = 12;
  std::size_t signal_length = 500;
  std::size_t patch_length = 50;

  static Geometry of(const CorpusConfig& c) { return {c.num_leads, c.signal_length, c.patch_length}; }
  std::size_t patches_per_lead() const { return signal_length / patch_length; }
  std::size_t cells() const { return num_leads * patches_per_lead(); }
};

struct Span {
  std::size_t lead = 0;
  std::size_t start = 0;
  std::size_t length = 0;
  friend bool operator==(const Span&, const Span&) = default;
};

/// A missingness pattern at sample resolution. `samples` is the source of
/// truth; dropped leads and spans record how it was built.
struct MaskSpec {
  MaskKind kind = MaskKind::joint;
  Geometry geometry;
  std::uint64_t seed = 0;
  MissingnessConfig params;
  std::vector<std::size_t> dropped_leads;
  std::vector<Span> spans;
  std::optional<Cell> restored;       // set when the keep-one-cell guard fired
  std::vector<std::uint8_t> samples;  // L×C, 1 = missing
  std::vector<std::uint8_t> cells;    // L×S, 1 = every sample of the cell missing
  double budget_fraction = 0.0;

  std::size_t masked_samples() const;
  std::size_t masked_cells() const;
  bool empty() const { return masked_samples() == 0; }
};

/// Rebuilds samples/cells/budget from dropped leads, spans and the guard.
void rebuild(MaskSpec& m);
MaskSpec empty_mask(const Geometry& g);

/// Random lead and/or temporal dropout. Never masks every cell: if a draw
/// would, one uniformly chosen cell is restored and a warning is logged.
MaskSpec sample_random_mask(MaskKind kind, const Geometry& g, const MissingnessConfig& cfg,
                            std::uint64_t seed);

/// Random mask of the given kind whose masked-sample fraction is `budget`
/// (exact up to one sample per lead of rounding).
MaskSpec sample_mask_at_budget(MaskKind kind, const Geometry& g, double budget, std::uint64_t seed);

/// `count` masks with the same kind and exactly the same masked-sample
/// budget as `base`: the first is `base`, the rest relocate its dropped
/// leads and spans uniformly at random.
std::vector<MaskSpec> equal_budget_candidates(const MaskSpec& base, std::size_t count,
                                              std::uint64_t seed);

/// Zeroes masked samples and sets the missing sentinel; other samples are
/// untouched. Idempotent.
SignalRecord apply_mask(const SignalRecord& record, const MaskSpec& mask);

/// Pretraining augmentation: joint dropout with pretraining parameters.
SignalRecord pretrain_augment(const SignalRecord& record, const Geometry& g,
                              const MissingnessConfig& cfg, std::uint64_t seed);

/// Structural check of kind: lead_only is a union of full rows, temporal
/// masks are one contiguous run per lead, joint is rows plus runs.
bool structurally_valid(const MaskSpec& m);

/// Semantic impact of every candidate on one record.
using ImpactFn =
    std::function<std::vector<double>(const SignalRecord&, std::span<const MaskSpec>)>;

/// Index of the candidate with the largest impact, lowest index on ties.
/// Throws DependencyError without an impact function and
/// std::invalid_argument when candidates disagree in kind or budget.
std::size_t select_hard_mask(const SignalRecord& record, std::span<const MaskSpec> candidates,
                             const ImpactFn& impact);

nlohmann::json mask_to_json(const MaskSpec& m);
MaskSpec mask_from_json(const nlohmann::json& j);

}  // namespace scar
