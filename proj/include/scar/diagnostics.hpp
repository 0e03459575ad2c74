#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "scar/corpus.hpp"
#include "scar/model.hpp"

namespace scar {

/// The three L×S maps behind one compensation figure.
struct CompensationPanels {
  std::size_t num_leads = 0;
  std::size_t patches_per_lead = 0;
  std::size_t cls = 0;
  Cell primary;
  std::vector<Cell> secondary;
  std::vector<double> alpha_full;     // pooling weights, full view
  std::vector<double> gates;          // expected gate sigmoid(logit / tau_end)
  std::vector<double> alpha_removed;  // pooling weights with the primary cell missing
};

/// Marks every sample of one cell as missing.
SignalRecord remove_cell(const SignalRecord& record, const Cell& cell, std::size_t patch_length);

/// Panels for the first positive class of a record with planted evidence.
CompensationPanels compensation_panels(const ScarParams& params, const ModelConfig& model,
                                       const SignalRecord& record);

struct CompensationStats {
  std::size_t records = 0;
  std::size_t increased = 0;          // secondary alpha mass rose after removal
  double increased_fraction = 0.0;
  double mean_secondary_full = 0.0;
  double mean_secondary_removed = 0.0;
  /// Share of the masker's top-budget cells that are evidence, over the
  /// share of evidence among all cells.
  double overlap_ratio = 0.0;
  double overlap_rate = 0.0;
  double chance_rate = 0.0;
};

CompensationStats compensation_stats(const ScarParams& params, const ModelConfig& model,
                                     std::span<const SignalRecord> records);

}  // namespace scar
