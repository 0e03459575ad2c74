#include "scar/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scar/inference.hpp"
#include "scar/missingness.hpp"

namespace scar {

SignalRecord remove_cell(const SignalRecord& record, const Cell& cell, std::size_t patch_length) {
  const std::size_t L = record.signal.rows(), C = record.signal.cols();
  if (cell.lead >= L || (cell.patch + 1) * patch_length > C) throw DimensionError("cell outside the record");
  SignalRecord out = record;
  if (out.missing.empty()) out.missing.assign(L * C, 0);
  for (std::size_t t = cell.patch * patch_length; t < (cell.patch + 1) * patch_length; ++t) {
    out.missing[cell.lead * C + t] = 1;
    out.signal[cell.lead * C + t] = 0.0;
  }
  return out;
}

CompensationPanels compensation_panels(const ScarParams& params, const ModelConfig& model,
                                       const SignalRecord& record) {
  if (record.evidence.empty()) throw ConfigError("record has no planted evidence");
  const auto& ev = record.evidence.front();
  CompensationPanels p;
  p.num_leads = record.signal.rows();
  p.patches_per_lead = record.signal.cols() / model.patch_length;
  p.cls = ev.cls;
  p.primary = ev.primary;
  p.secondary = ev.secondary;
  p.alpha_full = pooling_weights(params, model, record);
  const double tau = model.mask_temperature(1.0);
  for (double l : masker_cell_logits(params, model, record)) {
    const double x = l / tau;
    p.gates.push_back(x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)));
  }
  p.alpha_removed = pooling_weights(params, model, remove_cell(record, ev.primary, model.patch_length));
  return p;
}

CompensationStats compensation_stats(const ScarParams& params, const ModelConfig& model,
                                     std::span<const SignalRecord> records) {
  CompensationStats s;
  double overlap_hits = 0.0, overlap_slots = 0.0, evidence_cells = 0.0, all_cells = 0.0;
  for (const auto& r : records) {
    if (r.evidence.empty()) continue;
    const CompensationPanels p = compensation_panels(params, model, r);
    const std::size_t S = p.patches_per_lead;
    auto secondary_mass = [&](const std::vector<double>& alpha) {
      double m = 0.0;
      for (const auto& c : p.secondary) m += alpha[c.lead * S + c.patch];
      return m;
    };
    const double before = secondary_mass(p.alpha_full), after = secondary_mass(p.alpha_removed);
    s.mean_secondary_full += before;
    s.mean_secondary_removed += after;
    s.increased += after > before ? 1 : 0;
    ++s.records;

    // Masker ranking against every planted cell of every positive class.
    std::vector<std::uint8_t> is_evidence(p.gates.size(), 0);
    for (const auto& ev : r.evidence) {
      is_evidence[ev.primary.lead * S + ev.primary.patch] = 1;
      for (const auto& c : ev.secondary) is_evidence[c.lead * S + c.patch] = 1;
    }
    const auto logits = masker_cell_logits(params, model, r);
    std::vector<std::size_t> order(logits.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
    const auto top = static_cast<std::size_t>(std::llround(model.budget * static_cast<double>(logits.size())));
    for (std::size_t k = 0; k < top; ++k) overlap_hits += is_evidence[order[k]];
    overlap_slots += static_cast<double>(top);
    evidence_cells += static_cast<double>(std::count(is_evidence.begin(), is_evidence.end(), 1));
    all_cells += static_cast<double>(logits.size());
  }
  if (s.records == 0) throw ConfigError("no record with planted evidence");
  const double n = static_cast<double>(s.records);
  s.increased_fraction = static_cast<double>(s.increased) / n;
  s.mean_secondary_full /= n;
  s.mean_secondary_removed /= n;
  s.overlap_rate = overlap_slots > 0 ? overlap_hits / overlap_slots : 0.0;
  s.chance_rate = evidence_cells / all_cells;
  s.overlap_ratio = s.chance_rate > 0 ? s.overlap_rate / s.chance_rate : 0.0;
  return s;
}

}  // namespace scar
