#include "scar/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace scar {

AgreementKind agreement_kind_from_name(const std::string& s) {
  if (s == "mean_abs") return AgreementKind::mean_abs;
  if (s == "jensen_shannon") return AgreementKind::jensen_shannon;
  if (s == "cosine") return AgreementKind::cosine;
  throw ConfigError("unknown agreement '" + s + "'");
}

const char* agreement_kind_name(AgreementKind k) {
  switch (k) {
    case AgreementKind::mean_abs: return "mean_abs";
    case AgreementKind::jensen_shannon: return "jensen_shannon";
    case AgreementKind::cosine: return "cosine";
  }
  return "?";
}

namespace {

double xlogx_ratio(double x, double m) { return x > 0.0 ? x * std::log(x / m) : 0.0; }

double bernoulli_js(double p, double q) {
  const double m1 = 0.5 * (p + q), m0 = 1.0 - m1;
  const double kl_p = xlogx_ratio(p, m1) + xlogx_ratio(1.0 - p, m0);
  const double kl_q = xlogx_ratio(q, m1) + xlogx_ratio(1.0 - q, m0);
  return 0.5 * (kl_p + kl_q);
}

}  // namespace

double agreement(std::span<const double> p, std::span<const double> q, AgreementKind kind) {
  if (p.size() != q.size() || p.empty()) {
    throw DimensionError("agreement needs two equally sized non-empty vectors");
  }
  const double k = static_cast<double>(p.size());
  switch (kind) {
    case AgreementKind::mean_abs: {
      double s = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
      return std::clamp(1.0 - s / k, 0.0, 1.0);
    }
    case AgreementKind::jensen_shannon: {
      double s = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) s += bernoulli_js(p[i], q[i]);
      return std::clamp(1.0 - s / (k * std::log(2.0)), 0.0, 1.0);
    }
    case AgreementKind::cosine: {
      double pq = 0.0, pp = 0.0, qq = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        pq += p[i] * q[i];
        pp += p[i] * p[i];
        qq += q[i] * q[i];
      }
      if (pp <= 0.0 || qq <= 0.0) return 0.0;
      return std::clamp(pq / std::sqrt(pp * qq), 0.0, 1.0);
    }
  }
  return 0.0;
}

double impact(std::span<const double> p0, std::span<const double> p_oracle, AgreementKind kind) {
  return 1.0 - agreement(p0, p_oracle, kind);
}

double severity(const MaskSpec& mask) { return mask.budget_fraction; }

CmrsRow make_cmrs_row(std::uint64_t record_id, std::string mask_id, std::vector<double> p0,
                      std::vector<double> p_oracle, std::vector<double> p_method, double sev,
                      AgreementKind kind) {
  CmrsRow r;
  r.record_id = record_id;
  r.mask_id = std::move(mask_id);
  r.impact = impact(p0, p_oracle, kind);
  r.resolution = agreement(p_method, p0, kind);
  r.severity = sev;
  r.p0 = std::move(p0);
  r.p_oracle = std::move(p_oracle);
  r.p_method = std::move(p_method);
  return r;
}

std::optional<double> cmrs(std::span<const CmrsRow> ledger) {
  if (ledger.empty()) throw MetricError("CMRS of an empty ledger");
  double num = 0.0, den = 0.0;
  for (const auto& r : ledger) {
    const double w = r.severity * r.impact;
    num += w * r.resolution;
    den += w;
  }
  if (den < 1e-9) return std::nullopt;
  return num / den;
}

std::string ledger_csv(std::span<const CmrsRow> ledger) {
  std::ostringstream os;
  os.precision(17);
  const std::size_t K = ledger.empty() ? 0 : ledger.front().p0.size();
  os << "record_id,mask_id,S,I,R";
  for (const char* tag : {"p0", "p_oracle", "p_G"}) {
    for (std::size_t k = 0; k < K; ++k) os << ',' << tag << '_' << k;
  }
  os << '\n';
  for (const auto& r : ledger) {
    os << r.record_id << ',' << r.mask_id << ',' << r.severity << ',' << r.impact << ','
       << r.resolution;
    for (const auto* v : {&r.p0, &r.p_oracle, &r.p_method}) {
      for (double x : *v) os << ',' << x;
    }
    os << '\n';
  }
  return os.str();
}

std::optional<double> binary_auroc(std::span<const double> scores,
                                   std::span<const std::uint8_t> labels) {
  const std::size_t n = scores.size();
  if (labels.size() != n) throw DimensionError("auroc: scores/labels length mismatch");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Midranks (1-based) for tied groups.
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) rank[order[k]] = mid;
    i = j;
  }
  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i]) {
      pos += 1.0;
      rank_sum += rank[i];
    }
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) return std::nullopt;
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

MacroAuroc macro_auroc_detail(const Tensor& scores, std::span<const std::uint8_t> labels) {
  const std::size_t n = scores.rows(), K = scores.cols();
  if (labels.size() != n * K) throw DimensionError("macro_auroc: labels do not match scores");
  MacroAuroc out;
  std::vector<double> col(n);
  std::vector<std::uint8_t> lab(n);
  double total = 0.0;
  std::size_t valid = 0;
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      col[i] = scores[i * K + k];
      lab[i] = labels[i * K + k];
    }
    auto a = binary_auroc(col, lab);
    out.per_class.push_back(a);
    if (a) {
      total += *a;
      ++valid;
    } else {
      ++out.skipped;
    }
  }
  if (valid == 0) throw MetricError("macro AUROC: no class has both positive and negative labels");
  out.value = total / static_cast<double>(valid);
  return out;
}

double macro_auroc(const Tensor& scores, std::span<const std::uint8_t> labels) {
  return macro_auroc_detail(scores, labels).value;
}

}  // namespace scar
