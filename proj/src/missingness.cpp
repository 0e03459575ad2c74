#include "scar/missingness.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "scar/rng.hpp"

namespace scar {

using nlohmann::json;

const char* mask_kind_name(MaskKind k) {
  switch (k) {
    case MaskKind::lead_only: return "lead_only";
    case MaskKind::temporal_only: return "temporal_only";
    case MaskKind::joint: return "joint";
  }
  return "?";
}

MaskKind mask_kind_from_name(const std::string& s) {
  if (s == "lead_only") return MaskKind::lead_only;
  if (s == "temporal_only") return MaskKind::temporal_only;
  if (s == "joint") return MaskKind::joint;
  throw FormatError("unknown mask kind '" + s + "'");
}

std::size_t MaskSpec::masked_samples() const {
  return static_cast<std::size_t>(std::count(samples.begin(), samples.end(), 1));
}

std::size_t MaskSpec::masked_cells() const {
  return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), 1));
}

void rebuild(MaskSpec& m) {
  const auto& g = m.geometry;
  const std::size_t L = g.num_leads, C = g.signal_length, P = g.patch_length;
  const std::size_t S = g.patches_per_lead();
  m.samples.assign(L * C, 0);
  for (auto lead : m.dropped_leads) std::fill_n(m.samples.begin() + lead * C, C, 1);
  for (const auto& sp : m.spans) {
    std::fill_n(m.samples.begin() + sp.lead * C + sp.start, sp.length, 1);
  }
  if (m.restored) {
    std::fill_n(m.samples.begin() + m.restored->lead * C + m.restored->patch * P, P, 0);
  }
  m.cells.assign(L * S, 0);
  for (std::size_t c = 0; c < L; ++c) {
    for (std::size_t s = 0; s < S; ++s) {
      const auto first = m.samples.begin() + c * C + s * P;
      m.cells[c * S + s] = std::all_of(first, first + P, [](auto v) { return v != 0; }) ? 1 : 0;
    }
  }
  m.budget_fraction = static_cast<double>(m.masked_samples()) / static_cast<double>(L * C);
}

MaskSpec empty_mask(const Geometry& g) {
  MaskSpec m;
  m.geometry = g;
  m.params = {0.0, 0.0, 0.0};
  rebuild(m);
  return m;
}

namespace {

Span draw_span(Rng& rng, std::size_t lead, std::size_t C, std::size_t length) {
  length = std::min(length, C);
  const std::size_t start = uniform_index(rng, C - length + 1);
  return Span{lead, start, length};
}

void apply_guard(MaskSpec& m, Rng& rng) {
  if (m.masked_cells() < m.geometry.cells()) return;
  const std::size_t S = m.geometry.patches_per_lead();
  const std::size_t idx = uniform_index(rng, m.geometry.cells());
  m.restored = Cell{idx / S, idx % S};
  rebuild(m);
  std::clog << "[scar] warning: mask seed " << m.seed << " would hide every cell; restored cell ("
            << m.restored->lead << ',' << m.restored->patch << ")\n";
}

}  // namespace

MaskSpec sample_random_mask(MaskKind kind, const Geometry& g, const MissingnessConfig& cfg,
                            std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x3a5c));
  MaskSpec m;
  m.kind = kind;
  m.geometry = g;
  m.seed = seed;
  m.params = cfg;
  const std::size_t L = g.num_leads, C = g.signal_length;
  std::vector<std::uint8_t> dropped(L, 0);
  if (kind != MaskKind::temporal_only) {
    for (std::size_t c = 0; c < L; ++c) {
      if (uniform01(rng) < cfg.lead_drop_prob) {
        dropped[c] = 1;
        m.dropped_leads.push_back(c);
      }
    }
  }
  if (kind != MaskKind::lead_only) {
    for (std::size_t c = 0; c < L; ++c) {
      const double ratio = uniform(rng, cfg.span_ratio_min, cfg.span_ratio_max);
      const auto length = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(C)));
      const Span sp = draw_span(rng, c, C, length);
      if (!dropped[c] && sp.length > 0) m.spans.push_back(sp);
    }
  }
  rebuild(m);
  apply_guard(m, rng);
  return m;
}

MaskSpec sample_mask_at_budget(MaskKind kind, const Geometry& g, double budget, std::uint64_t seed) {
  if (!(budget >= 0.0 && budget < 1.0)) throw std::invalid_argument("budget must lie in [0,1)");
  Rng rng(derive_seed(seed, 0xb0d6));
  MaskSpec m;
  m.kind = kind;
  m.geometry = g;
  m.seed = seed;
  m.params = {0.0, budget, budget};
  const std::size_t L = g.num_leads, C = g.signal_length;
  const double total = budget * static_cast<double>(L * C);
  std::vector<std::size_t> leads(L);
  for (std::size_t c = 0; c < L; ++c) leads[c] = c;
  shuffle_range(leads.begin(), leads.end(), rng);
  std::size_t n_drop = 0;
  if (kind == MaskKind::lead_only) {
    n_drop = static_cast<std::size_t>(std::llround(budget * static_cast<double>(L)));
  } else if (kind == MaskKind::joint) {
    // Half of the budget (rounded down to whole leads) goes to lead dropout.
    n_drop = static_cast<std::size_t>(std::floor(0.5 * budget * static_cast<double>(L)));
  }
  n_drop = std::min(n_drop, L - 1);
  for (std::size_t i = 0; i < n_drop; ++i) m.dropped_leads.push_back(leads[i]);
  std::sort(m.dropped_leads.begin(), m.dropped_leads.end());
  if (kind != MaskKind::lead_only) {
    const std::size_t rest = L - n_drop;
    const double per_lead = (total - static_cast<double>(n_drop * C)) / static_cast<double>(rest);
    const auto length = static_cast<std::size_t>(std::llround(std::max(0.0, per_lead)));
    for (std::size_t i = n_drop; i < L; ++i) {
      if (length > 0) m.spans.push_back(draw_span(rng, leads[i], C, length));
    }
    std::sort(m.spans.begin(), m.spans.end(), [](const Span& a, const Span& b) { return a.lead < b.lead; });
  }
  rebuild(m);
  apply_guard(m, rng);
  return m;
}

std::vector<MaskSpec> equal_budget_candidates(const MaskSpec& base, std::size_t count,
                                              std::uint64_t seed) {
  std::vector<MaskSpec> out;
  if (count == 0) return out;
  out.push_back(base);
  const std::size_t L = base.geometry.num_leads, C = base.geometry.signal_length;
  std::vector<std::size_t> span_lengths;
  for (const auto& sp : base.spans) span_lengths.push_back(sp.length);
  for (std::size_t k = 1; k < count; ++k) {
    Rng rng(derive_seed(seed, 0xca4d, k));
    MaskSpec m;
    m.kind = base.kind;
    m.geometry = base.geometry;
    m.seed = derive_seed(seed, 0xca4d, k);
    m.params = base.params;
    std::vector<std::size_t> leads(L);
    for (std::size_t c = 0; c < L; ++c) leads[c] = c;
    shuffle_range(leads.begin(), leads.end(), rng);
    const std::size_t n_drop = base.dropped_leads.size();
    m.dropped_leads.assign(leads.begin(), leads.begin() + static_cast<std::ptrdiff_t>(n_drop));
    std::sort(m.dropped_leads.begin(), m.dropped_leads.end());
    auto lengths = span_lengths;
    shuffle_range(lengths.begin(), lengths.end(), rng);
    for (std::size_t i = 0; i < lengths.size(); ++i) {
      m.spans.push_back(draw_span(rng, leads[n_drop + i], C, lengths[i]));
    }
    std::sort(m.spans.begin(), m.spans.end(), [](const Span& a, const Span& b) { return a.lead < b.lead; });
    rebuild(m);
    // Relocation can produce a full mask only when base was guarded.
    apply_guard(m, rng);
    out.push_back(std::move(m));
  }
  return out;
}

SignalRecord apply_mask(const SignalRecord& record, const MaskSpec& mask) {
  const std::size_t n = record.signal.size();
  if (mask.samples.size() != n) {
    throw DimensionError("mask geometry does not match record signal " + record.signal.shape_string());
  }
  SignalRecord out = record;
  if (out.missing.empty()) out.missing.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (mask.samples[i]) {
      out.signal[i] = 0.0;
      out.missing[i] = 1;
    }
  }
  return out;
}

SignalRecord pretrain_augment(const SignalRecord& record, const Geometry& g,
                              const MissingnessConfig& cfg, std::uint64_t seed) {
  if (cfg.lead_drop_prob <= 0.0 && cfg.span_ratio_max <= 0.0) return record;
  return apply_mask(record, sample_random_mask(MaskKind::joint, g, cfg, seed));
}

bool structurally_valid(const MaskSpec& m) {
  const std::size_t L = m.geometry.num_leads, C = m.geometry.signal_length;
  if (m.samples.size() != L * C) return false;
  for (std::size_t c = 0; c < L; ++c) {
    const auto row = m.samples.begin() + c * C;
    const auto n = static_cast<std::size_t>(std::count(row, row + C, 1));
    if (n == 0 || n == C) continue;
    if (m.kind == MaskKind::lead_only && !m.restored) return false;
    // One contiguous run.
    std::size_t runs = 0;
    for (std::size_t t = 0; t < C; ++t) {
      if (row[t] && (t == 0 || !row[t - 1])) ++runs;
    }
    if (runs != 1 && !m.restored) return false;
  }
  if (m.kind == MaskKind::temporal_only && !m.dropped_leads.empty()) return false;
  return true;
}

std::size_t select_hard_mask(const SignalRecord& record, std::span<const MaskSpec> candidates,
                             const ImpactFn& impact) {
  if (!impact) throw DependencyError("hard-mask selection needs a reference model");
  if (candidates.empty()) throw std::invalid_argument("no candidate masks");
  for (const auto& c : candidates) {
    if (c.kind != candidates[0].kind) throw std::invalid_argument("candidate masks differ in kind");
    if (std::abs(c.budget_fraction - candidates[0].budget_fraction) > 0.02) {
      throw std::invalid_argument("candidate masks differ in budget by more than 0.02");
    }
  }
  if (candidates.size() == 1) return 0;
  const auto scores = impact(record, candidates);
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

json mask_to_json(const MaskSpec& m) {
  json spans = json::array();
  for (const auto& sp : m.spans) spans.push_back({sp.lead, sp.start, sp.length});
  json cells = json::array();
  const std::size_t S = m.geometry.patches_per_lead();
  for (std::size_t i = 0; i < m.cells.size(); ++i) {
    if (m.cells[i]) cells.push_back({i / S, i % S});
  }
  json j{{"kind", mask_kind_name(m.kind)},
         {"seed", m.seed},
         {"geometry", {m.geometry.num_leads, m.geometry.signal_length, m.geometry.patch_length}},
         {"params", {m.params.lead_drop_prob, m.params.span_ratio_min, m.params.span_ratio_max}},
         {"dropped_leads", m.dropped_leads},
         {"spans", std::move(spans)},
         {"cells", std::move(cells)},
         {"budget_fraction", m.budget_fraction}};
  j["restored"] = m.restored ? json{m.restored->lead, m.restored->patch} : json(nullptr);
  return j;
}

MaskSpec mask_from_json(const json& j) {
  MaskSpec m;
  try {
    m.kind = mask_kind_from_name(j.at("kind").get<std::string>());
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto& g = j.at("geometry");
    m.geometry = {g.at(0).get<std::size_t>(), g.at(1).get<std::size_t>(), g.at(2).get<std::size_t>()};
    const auto& p = j.at("params");
    m.params = {p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()};
    m.dropped_leads = j.at("dropped_leads").get<std::vector<std::size_t>>();
    for (const auto& s : j.at("spans")) {
      m.spans.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>(), s.at(2).get<std::size_t>()});
    }
    if (!j.at("restored").is_null()) {
      m.restored = Cell{j["restored"].at(0).get<std::size_t>(), j["restored"].at(1).get<std::size_t>()};
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed mask: ") + e.what());
  }
  rebuild(m);
  std::size_t listed = j.at("cells").size();
  if (listed != m.masked_cells()) throw FormatError("mask cell list disagrees with its spans");
  return m;
}

}  // namespace scar
