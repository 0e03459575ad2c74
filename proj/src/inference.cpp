#include "scar/inference.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

#include "scar/graph.hpp"
#include "scar/metrics.hpp"
#include "scar/parallel.hpp"
#include "scar/rng.hpp"
#include "scar/tokenizer.hpp"

namespace scar {

namespace {

constexpr std::size_t kChunk = 64;

Tensor normalized_rows(const Tensor& t) {
  Tensor out = t;
  const std::size_t r = t.rows(), c = t.cols();
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += t[i * c + j] * t[i * c + j];
    const double n = std::sqrt(s);
    if (n < ag::kNormEpsilon) throw ag::DegenerateVectorError("zero embedding");
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= n;
  }
  return out;
}

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

TokenBatch make_token_batch(std::span<const SignalRecord* const> records, std::size_t patch_length) {
  TokenBatch b;
  b.records = records.size();
  if (records.empty()) return b;
  const std::size_t L = records[0]->signal.rows(), C = records[0]->signal.cols();
  b.cells = L * (C / patch_length);
  std::vector<double> data;
  data.reserve(records.size() * L * C);
  for (const auto* r : records) {
    TokenGrid g = patchify(r->signal, r->missing, patch_length);
    if (g.cells() != b.cells) throw DimensionError("records in a batch differ in geometry");
    data.insert(data.end(), g.patches.data().begin(), g.patches.data().end());
    b.valid.insert(b.valid.end(), g.cell_valid.begin(), g.cell_valid.end());
  }
  b.patches = Tensor({records.size() * b.cells, patch_length}, std::move(data));
  return b;
}

TokenBatch make_token_batch(std::span<const SignalRecord> records, std::size_t patch_length) {
  std::vector<const SignalRecord*> ptrs;
  ptrs.reserve(records.size());
  for (const auto& r : records) ptrs.push_back(&r);
  return make_token_batch(std::span<const SignalRecord* const>(ptrs), patch_length);
}

Tensor prompt_embeddings(const ScarParams& params, const ModelConfig& cfg, const CorpusConfig& corpus) {
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < corpus.num_classes; ++k) {
    const auto p = class_prompt(k, corpus);
    ids.insert(ids.end(), p.begin(), p.end());
  }
  ag::Tape tape;
  BoundParams bp(tape, params, {});
  (void)cfg;
  return normalized_rows(encode_report(bp, ids, corpus.report_length).value());
}

PromptConsistency prompt_self_consistency(const ScarParams& params, const ModelConfig& cfg,
                                          const CorpusConfig& corpus, std::span<const SignalRecord> records) {
  const Tensor prompts = prompt_embeddings(params, cfg, corpus);
  const std::size_t K = corpus.num_classes, d = prompts.cols();
  std::vector<std::size_t> ids;
  for (const auto& r : records) ids.insert(ids.end(), r.report.begin(), r.report.end());
  ag::Tape tape;
  BoundParams bp(tape, params, {});
  const Tensor reports = normalized_rows(encode_report(bp, ids, corpus.report_length).value());
  std::vector<double> means(K * d, 0.0);
  std::vector<std::size_t> counts(K, 0);
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (std::size_t k = 0; k < K; ++k) {
      if (!records[i].labels[k]) continue;
      ++counts[k];
      for (std::size_t j = 0; j < d; ++j) means[k * d + j] += reports[i * d + j];
    }
  }
  for (std::size_t k = 0; k < K; ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += means[k * d + j] * means[k * d + j];
    if (s > 0.0) {
      for (std::size_t j = 0; j < d; ++j) means[k * d + j] /= std::sqrt(s);
    }
  }
  PromptConsistency out;
  out.correct.assign(K, 0);
  std::size_t hits = 0;
  for (std::size_t k = 0; k < K; ++k) {
    if (counts[k] == 0) continue;
    std::size_t best = K;
    double best_v = -2.0;
    for (std::size_t c = 0; c < K; ++c) {
      if (counts[c] == 0) continue;
      double v = 0.0;
      for (std::size_t j = 0; j < d; ++j) v += prompts[k * d + j] * means[c * d + j];
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    out.correct[k] = best == k;
    hits += out.correct[k];
  }
  out.accuracy = K == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(K);
  return out;
}

Tensor embed_records(const ScarParams& params, const ModelConfig& cfg,
                     std::span<const SignalRecord> records) {
  const std::size_t n = records.size();
  const std::size_t d = cfg.embed_dim;
  Tensor out = Tensor::matrix(n, d);
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  parallel_for(chunks, [&](std::size_t ci) {
    const std::size_t lo = ci * kChunk, hi = std::min(n, lo + kChunk);
    TokenBatch b = make_token_batch(records.subspan(lo, hi - lo), cfg.patch_length);
    ag::Tape tape;
    BoundParams bp(tape, params, {});
    ag::Var h = encode_tokens(bp, tape.constant(std::move(b.patches)));
    Pooled pooled = select_and_pool(bp, h, b.valid, b.cells, cfg.pooling);
    Tensor z = normalized_rows(pooled.embedding.value());
    std::copy(z.data().begin(), z.data().end(), out.raw() + lo * d);
  });
  return out;
}

Tensor zero_shot_scores(const ScarParams& params, const ModelConfig& cfg, const Tensor& prompts,
                        std::span<const SignalRecord> records) {
  const Tensor z = embed_records(params, cfg, records);
  const std::size_t n = z.rows(), d = z.cols(), K = prompts.rows();
  Tensor s = Tensor::matrix(n, K);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < K; ++k) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += z[i * d + j] * prompts[k * d + j];
      s[i * K + k] = std::clamp(dot, -1.0, 1.0);
    }
  }
  return s;
}

std::vector<double> score_probabilities(std::span<const double> scores, double temperature) {
  std::vector<double> p(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) p[i] = sigmoid(scores[i] / temperature);
  return p;
}

Prediction zero_shot_predict(const SignalRecord& record, const ScarParams& params,
                             const ModelConfig& cfg, const Tensor& prompts) {
  const Tensor s = zero_shot_scores(params, cfg, prompts, std::span<const SignalRecord>(&record, 1));
  Prediction p;
  p.scores = s.data();
  p.probabilities = score_probabilities(p.scores, cfg.temperature);
  return p;
}

std::vector<double> pooling_weights(const ScarParams& params, const ModelConfig& cfg,
                                    const SignalRecord& record) {
  TokenBatch b = make_token_batch(std::span<const SignalRecord>(&record, 1), cfg.patch_length);
  ag::Tape tape;
  BoundParams bp(tape, params, {});
  ag::Var h = encode_tokens(bp, tape.constant(std::move(b.patches)));
  return select_and_pool(bp, h, b.valid, b.cells, cfg.pooling).weights.value().data();
}

std::vector<double> masker_cell_logits(const ScarParams& params, const ModelConfig& cfg,
                                       const SignalRecord& record) {
  TokenBatch b = make_token_batch(std::span<const SignalRecord>(&record, 1), cfg.patch_length);
  ag::Tape tape;
  BoundParams bp(tape, params, {});
  ag::Var h = encode_tokens(bp, tape.constant(std::move(b.patches)));
  return masker_logits(bp, h).value().data();
}

std::vector<std::uint8_t> stack_labels(std::span<const SignalRecord> records) {
  std::vector<std::uint8_t> y;
  for (const auto& r : records) y.insert(y.end(), r.labels.begin(), r.labels.end());
  return y;
}

std::string prediction_csv(std::span<const SignalRecord> records, std::span<const std::string> mask_ids,
                           const Tensor& scores) {
  std::ostringstream os;
  os.precision(17);
  const std::size_t K = scores.cols();
  os << "record_id,mask_id";
  for (std::size_t k = 0; k < K; ++k) os << ",score_" << k;
  os << '\n';
  for (std::size_t i = 0; i < records.size(); ++i) {
    os << records[i].id << ',' << (i < mask_ids.size() ? mask_ids[i] : std::string("none"));
    for (std::size_t k = 0; k < K; ++k) os << ',' << scores[i * K + k];
    os << '\n';
  }
  return os.str();
}

// ---- linear probe -----------------------------------------------------------

std::vector<std::size_t> stratified_subset(std::span<const SignalRecord> records, double fraction,
                                           std::uint64_t seed) {
  const std::size_t n = records.size();
  if (n == 0) return {};
  const std::size_t K = records[0].labels.size();
  const auto target = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
  if (target >= n) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    return all;
  }
  Rng rng(derive_seed(seed, 0x9a0be));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  shuffle_range(order.begin(), order.end(), rng);
  std::vector<std::uint8_t> taken(n, 0);
  std::vector<std::size_t> chosen;
  // Per-class quota of positives, proportional to prevalence, at least one.
  for (std::size_t k = 0; k < K && chosen.size() < target; ++k) {
    std::size_t pos_total = 0;
    for (const auto& r : records) pos_total += r.labels[k];
    auto quota = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(pos_total))));
    std::size_t have = 0;
    for (auto i : chosen) have += records[i].labels[k];
    for (std::size_t i : order) {
      if (have >= quota || chosen.size() >= target) break;
      if (!taken[i] && records[i].labels[k]) {
        taken[i] = 1;
        chosen.push_back(i);
        ++have;
      }
    }
  }
  for (std::size_t i : order) {
    if (chosen.size() >= target) break;
    if (!taken[i]) {
      taken[i] = 1;
      chosen.push_back(i);
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<ProbeResult> linear_probe(const ScarParams& params, const ModelConfig& cfg,
                                      std::span<const SignalRecord> train,
                                      std::span<const SignalRecord> test, const ProbeConfig& probe) {
  const Tensor z_train = embed_records(params, cfg, train);
  const Tensor z_test = embed_records(params, cfg, test);
  const std::size_t d = z_train.cols();
  const std::size_t K = train.empty() ? 0 : train[0].labels.size();
  std::vector<ProbeResult> results;
  for (double frac : probe.fractions) {
    const auto idx = stratified_subset(train, frac, probe.seed);
    const std::size_t n = idx.size();
    std::vector<std::uint8_t> usable(K, 0);
    for (std::size_t k = 0; k < K; ++k) {
      std::size_t pos = 0;
      for (auto i : idx) pos += train[i].labels[k];
      usable[k] = (pos > 0 && pos < n) ? 1 : 0;
      if (!usable[k]) {
        std::clog << "[scar] probe fraction " << frac << ": class " << k
                  << " has a single label value in the training subset; skipped\n";
      }
    }
    // Full-batch Adam on binary cross-entropy, one logistic head per class.
    std::vector<double> w(d * K, 0.0), b(K, 0.0);
    std::vector<double> mw(w.size(), 0.0), vw(w.size(), 0.0), mb(K, 0.0), vb(K, 0.0);
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::vector<double> gw(w.size()), gb(K);
    for (std::size_t epoch = 1; epoch <= probe.epochs; ++epoch) {
      std::fill(gw.begin(), gw.end(), 0.0);
      std::fill(gb.begin(), gb.end(), 0.0);
      for (auto i : idx) {
        const double* x = z_train.raw() + i * d;
        for (std::size_t k = 0; k < K; ++k) {
          if (!usable[k]) continue;
          double logit = b[k];
          for (std::size_t j = 0; j < d; ++j) logit += x[j] * w[j * K + k];
          const double err = sigmoid(logit) - static_cast<double>(train[i].labels[k]);
          gb[k] += err;
          for (std::size_t j = 0; j < d; ++j) gw[j * K + k] += err * x[j];
        }
      }
      const double scale = 1.0 / static_cast<double>(n);
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(epoch));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(epoch));
      auto step = [&](double& p, double& m, double& v, double g) {
        g *= scale;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        p -= probe.learning_rate * (m / c1) / (std::sqrt(v / c2) + eps);
      };
      for (std::size_t i = 0; i < w.size(); ++i) step(w[i], mw[i], vw[i], gw[i]);
      for (std::size_t k = 0; k < K; ++k) step(b[k], mb[k], vb[k], gb[k]);
    }
    ProbeResult res;
    res.fraction = frac;
    res.train_records = n;
    std::vector<double> col(test.size());
    std::vector<std::uint8_t> lab(test.size());
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t k = 0; k < K; ++k) {
      if (!usable[k]) {
        ++res.skipped_classes;
        continue;
      }
      for (std::size_t i = 0; i < test.size(); ++i) {
        double logit = b[k];
        for (std::size_t j = 0; j < d; ++j) logit += z_test[i * d + j] * w[j * K + k];
        col[i] = logit;
        lab[i] = test[i].labels[k];
      }
      if (auto a = binary_auroc(col, lab)) {
        total += *a;
        ++counted;
      } else {
        ++res.skipped_classes;
      }
    }
    if (counted > 0) res.macro_auroc = total / static_cast<double>(counted);
    results.push_back(res);
  }
  return results;
}

}  // namespace scar
