#include "scar/tokenizer.hpp"

#include <algorithm>
#include <numeric>

namespace scar {

std::size_t TokenGrid::valid_count() const {
  return static_cast<std::size_t>(std::count(cell_valid.begin(), cell_valid.end(), 1));
}

TokenGrid patchify(const Tensor& signal, std::span<const std::uint8_t> missing,
                   std::size_t patch_length) {
  if (signal.rank() != 2) throw TokenizationError("signal must be an L×C matrix");
  const std::size_t L = signal.rows(), C = signal.cols();
  if (patch_length == 0 || C % patch_length != 0) {
    throw TokenizationError("signal length " + std::to_string(C) +
                            " is not divisible by patch length " + std::to_string(patch_length));
  }
  if (!missing.empty() && missing.size() != L * C) {
    throw TokenizationError("missing mask does not match signal extents");
  }
  const std::size_t S = C / patch_length;
  TokenGrid g;
  g.num_leads = L;
  g.patches_per_lead = S;
  g.patch_length = patch_length;
  g.lead_order.resize(L);
  std::iota(g.lead_order.begin(), g.lead_order.end(), std::size_t{0});
  // Row-major L×C already lays patches out contiguously.
  std::vector<double> data = signal.data();
  g.cell_valid.assign(L * S, 1);
  if (!missing.empty()) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (missing[i]) data[i] = 0.0;
    }
    for (std::size_t c = 0; c < L; ++c) {
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t base = c * C + s * patch_length;
        bool all_missing = true;
        for (std::size_t i = 0; i < patch_length && all_missing; ++i) {
          all_missing = missing[base + i] != 0;
        }
        if (all_missing) g.cell_valid[c * S + s] = 0;
      }
    }
  }
  g.patches = Tensor({L, S, patch_length}, std::move(data));
  return g;
}

Tensor unpatchify(const TokenGrid& grid) {
  return grid.patches.reshaped({grid.num_leads, grid.patches_per_lead * grid.patch_length});
}

const std::vector<std::string>& canonical_lead_names() {
  static const std::vector<std::string> names = {"I",  "II", "III", "aVR", "aVF", "aVL",
                                                 "V1", "V2", "V3",  "V4",  "V5",  "V6"};
  return names;
}

Tensor canonicalize_leads(const Tensor& signal, std::span<const std::string> source_order) {
  const auto& canon = canonical_lead_names();
  if (signal.rank() != 2 || signal.rows() != canon.size()) {
    throw TokenizationError("expected a " + std::to_string(canon.size()) + "-lead signal");
  }
  if (source_order.size() != canon.size()) {
    throw TokenizationError("source lead order must name every lead exactly once");
  }
  const std::size_t C = signal.cols();
  Tensor out = Tensor::matrix(canon.size(), C);
  std::vector<std::uint8_t> seen(canon.size(), 0);
  for (std::size_t row = 0; row < source_order.size(); ++row) {
    auto it = std::find(canon.begin(), canon.end(), source_order[row]);
    if (it == canon.end()) throw TokenizationError("unknown lead name '" + source_order[row] + "'");
    const auto target = static_cast<std::size_t>(it - canon.begin());
    if (seen[target]++) throw TokenizationError("duplicate lead name '" + source_order[row] + "'");
    std::copy_n(signal.raw() + row * C, C, out.raw() + target * C);
  }
  return out;
}

}  // namespace scar
