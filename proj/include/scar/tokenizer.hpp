#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "scar/tensor.hpp"

namespace scar {

class TokenizationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Spatio-temporal token lattice: lead c, patch s covers samples
/// [s*patch_length, (s+1)*patch_length) of that lead.
struct TokenGrid {
  Tensor patches;                         // L×S×P
  std::vector<std::size_t> lead_order;    // canonical index of each row
  std::vector<std::uint8_t> cell_valid;   // L×S; 0 when the whole patch is missing
  std::size_t num_leads = 0;
  std::size_t patches_per_lead = 0;
  std::size_t patch_length = 0;

  std::size_t cells() const { return num_leads * patches_per_lead; }
  std::size_t valid_count() const;
};

/// Splits every lead of an L×C signal into patches. `missing` is the
/// optional L×C sentinel mask; missing samples enter the patches as 0.
TokenGrid patchify(const Tensor& signal, std::span<const std::uint8_t> missing,
                   std::size_t patch_length);
Tensor unpatchify(const TokenGrid& grid);

/// Standard montage in model order: I, II, III, aVR, aVF, aVL, V1..V6.
const std::vector<std::string>& canonical_lead_names();

/// Reorders rows so row i holds canonical lead i. `source_order` names the
/// lead stored in each input row and must be a permutation of the canonical
/// names (FormatError-style TokenizationError otherwise).
Tensor canonicalize_leads(const Tensor& signal, std::span<const std::string> source_order);

}  // namespace scar
