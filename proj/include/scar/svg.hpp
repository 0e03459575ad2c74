#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "scar/corpus.hpp"
#include "scar/diagnostics.hpp"
#include "scar/training.hpp"

namespace scar {

struct HeatGrid {
  std::string title;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // rows×cols, row-major
  std::vector<std::string> row_labels;
  std::string annotation;      // drawn under the grid
  std::vector<Cell> primary;   // outlined solid
  std::vector<Cell> secondary; // outlined dashed
};

std::string heat_grid_svg(const HeatGrid& grid);

/// Four side-by-side grids: full-view alpha, gates, alpha after removal,
/// and the planted evidence overlay.
std::string compensation_svg(const CompensationPanels& panels, std::uint64_t record_id);

/// Loss components per epoch plus validation AUROC when present.
std::string loss_curve_svg(std::span<const EpochMetrics> history);

/// Parses the metrics CSV written by training.
std::vector<EpochMetrics> parse_metrics_csv(const std::string& text);

}  // namespace scar
