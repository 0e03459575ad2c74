#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "scar/missingness.hpp"
#include "scar/tensor.hpp"

namespace scar {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// How two multi-label probability vectors are compared.
enum class AgreementKind {
  mean_abs,        // 1 - mean_k |p_k - q_k|
  jensen_shannon,  // 1 - mean_k JS(Bern(p_k) || Bern(q_k)) / ln 2
  cosine,          // cos(p, q)
};

AgreementKind agreement_kind_from_name(const std::string& s);
const char* agreement_kind_name(AgreementKind k);

double agreement(std::span<const double> p, std::span<const double> q,
                 AgreementKind kind = AgreementKind::mean_abs);
/// I = 1 - agreement(p0, p_oracle).
double impact(std::span<const double> p0, std::span<const double> p_oracle,
              AgreementKind kind = AgreementKind::mean_abs);
/// S = fraction of masked samples.
double severity(const MaskSpec& mask);

struct CmrsRow {
  std::uint64_t record_id = 0;
  std::string mask_id;
  std::vector<double> p0;
  std::vector<double> p_oracle;
  std::vector<double> p_method;
  double severity = 0.0;
  double impact = 0.0;
  double resolution = 0.0;  // R_G
};

/// Fills impact and resolution from the three probability vectors.
CmrsRow make_cmrs_row(std::uint64_t record_id, std::string mask_id, std::vector<double> p0,
                      std::vector<double> p_oracle, std::vector<double> p_method, double severity,
                      AgreementKind kind = AgreementKind::mean_abs);

/// sum(S*I*R) / sum(S*I). nullopt ("undefined") when sum(S*I) < 1e-9;
/// MetricError on an empty ledger.
std::optional<double> cmrs(std::span<const CmrsRow> ledger);

std::string ledger_csv(std::span<const CmrsRow> ledger);

/// One-vs-rest AUROC via the Mann-Whitney rank statistic with midranks.
/// nullopt when the labels are all one value.
std::optional<double> binary_auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct MacroAuroc {
  double value = 0.0;
  std::vector<std::optional<double>> per_class;
  std::size_t skipped = 0;
};

/// scores and labels are n×K row-major. Classes lacking both label values
/// are skipped; MetricError when none remain.
MacroAuroc macro_auroc_detail(const Tensor& scores, std::span<const std::uint8_t> labels);
double macro_auroc(const Tensor& scores, std::span<const std::uint8_t> labels);

}  // namespace scar
