#include "scar/training.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

#include "scar/inference.hpp"
#include "scar/metrics.hpp"
#include "scar/rng.hpp"
#include "scar/tokenizer.hpp"

namespace scar {

using nlohmann::json;

const char* masking_name(Masking m) { return m == Masking::adversarial ? "adversarial" : "random"; }

Masking masking_from_name(const std::string& s) {
  if (s == "adversarial") return Masking::adversarial;
  if (s == "random") return Masking::random;
  throw ConfigError("unknown masking '" + s + "' (expected adversarial or random)");
}

void TrainConfig::validate() const {
  if (lambda_cons < 0.0 || lambda_mask < 0.0) throw ConfigError("loss weights must be >= 0");
  if (batch_size < 2) throw ConfigError("batch size must be >= 2 for in-batch negatives");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (masker_steps == 0 || encoder_steps == 0) throw ConfigError("step ratio entries must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0)) {
    throw ConfigError("invalid Adam hyper-parameters");
  }
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"lambda_cons", c.lambda_cons},
           {"lambda_mask", c.lambda_mask},
           {"learning_rate", c.learning_rate},
           {"batch_size", c.batch_size},
           {"epochs", c.epochs},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"adam_eps", c.adam_eps},
           {"masker_steps", c.masker_steps},
           {"encoder_steps", c.encoder_steps},
           {"seed", c.seed},
           {"masking", masking_name(c.masking)},
           {"masker_maximizes_consistency", c.masker_maximizes_consistency},
           {"augment", c.augment},
           {"val_every", c.val_every},
           {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const json& j, TrainConfig& c) {
  TrainConfig d;
  c.lambda_cons = j.value("lambda_cons", d.lambda_cons);
  c.lambda_mask = j.value("lambda_mask", d.lambda_mask);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.masker_steps = j.value("masker_steps", d.masker_steps);
  c.encoder_steps = j.value("encoder_steps", d.encoder_steps);
  c.seed = j.value("seed", d.seed);
  c.masking = masking_from_name(j.value("masking", std::string(masking_name(d.masking))));
  c.masker_maximizes_consistency =
      j.value("masker_maximizes_consistency", d.masker_maximizes_consistency);
  c.augment = j.value("augment", d.augment);
  c.val_every = j.value("val_every", d.val_every);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.validate();
}

const std::vector<Variant>& variants() {
  static const std::vector<Variant> table{
      {"Random Mask + Mean Pool", Masking::random, Pooling::mean, false},
      {"Random Mask + Mean Pool + Consistency", Masking::random, Pooling::mean, true},
      {"Adv. Mask + Mean Pool", Masking::adversarial, Pooling::mean, false},
      {"Adv. Mask + Selector", Masking::adversarial, Pooling::selector, false},
      {"Full Model", Masking::adversarial, Pooling::selector, true},
  };
  return table;
}

const Variant& variant_by_name(const std::string& name) {
  for (const auto& v : variants()) {
    if (v.name == name) return v;
  }
  std::string valid;
  for (const auto& v : variants()) valid += "\n  " + v.name;
  throw ConfigError("unknown variant '" + name + "'; valid variants:" + valid);
}

void apply_variant(const Variant& v, ModelConfig& model, TrainConfig& train) {
  model.pooling = v.pooling;
  train.masking = v.masking;
  if (!v.consistency) {
    train.lambda_cons = 0.0;
  } else if (train.lambda_cons <= 0.0) {
    train.lambda_cons = 1.0;
  }
}

// ---- losses -----------------------------------------------------------------

ag::Var loss_align(ag::Var z, ag::Var u, double temperature) {
  if (z.value().rows() < 2) throw ConfigError("InfoNCE needs at least two pairs");
  if (z.value().shape() != u.value().shape()) throw DimensionError("loss_align: z and u differ in shape");
  ag::Var sim = ag::scale(ag::matmul(ag::row_normalize(z), ag::transpose(ag::row_normalize(u))),
                          1.0 / temperature);
  return ag::mean(ag::sub(ag::logsumexp_rows(sim), ag::diagonal(sim)));
}

ag::Var loss_cons(ag::Var z_masked, ag::Var z_full) {
  ag::Var cos = ag::row_cosine(z_masked, ag::stop_gradient(z_full));
  return ag::add_scalar(ag::neg(ag::mean(cos)), 1.0);
}

ag::Var loss_budget(ag::Var gates, double budget) {
  return ag::square(ag::add_scalar(ag::mean(gates), -budget));
}

// ---- batches ----------------------------------------------------------------

StepBatch make_step_batch(std::span<const SignalRecord* const> augmented,
                          std::span<const SignalRecord* const> clean, const CorpusConfig& corpus) {
  if (augmented.size() != clean.size()) throw DimensionError("augmented and clean batches differ");
  TokenBatch a = make_token_batch(augmented, corpus.patch_length);
  TokenBatch c = make_token_batch(clean, corpus.patch_length);
  StepBatch b;
  b.patches = std::move(a.patches);
  b.valid = std::move(a.valid);
  b.clean_patches = std::move(c.patches);
  b.clean_valid = std::move(c.valid);
  b.records = a.records;
  b.cells = a.cells;
  b.report_length = corpus.report_length;
  for (const auto* r : clean) {
    if (r->report.size() != corpus.report_length) throw FormatError("report length mismatch");
    b.report_ids.insert(b.report_ids.end(), r->report.begin(), r->report.end());
  }
  return b;
}

StepNoise draw_step_noise(const StepBatch& batch, double budget, std::uint64_t seed) {
  const std::size_t n = batch.records * batch.cells;
  StepNoise noise;
  noise.gumbel = Tensor::matrix(n, 1);
  noise.random_gates = Tensor::matrix(n, 1);
  Rng g_rng(derive_seed(seed, 0x6b));
  Rng r_rng(derive_seed(seed, 0x7a));
  for (std::size_t i = 0; i < n; ++i) {
    noise.gumbel[i] = gumbel(g_rng);
    const bool drop = uniform01(r_rng) < budget;
    noise.random_gates[i] = (!batch.valid[i] || drop) ? 1.0 : 0.0;
  }
  return noise;
}

namespace {

// Visible set g < 0.5 on valid cells; a record left with nothing keeps its
// least-gated valid cell.
std::vector<std::uint8_t> visible_with_fallback(const Tensor& gates, std::span<const std::uint8_t> valid,
                                                std::size_t segment) {
  auto vis = training_visible_set(gates, valid);
  for (std::size_t base = 0; base < vis.size(); base += segment) {
    bool any = false;
    for (std::size_t i = base; i < base + segment; ++i) any = any || vis[i];
    if (any) continue;
    std::size_t best = vis.size();
    for (std::size_t i = base; i < base + segment; ++i) {
      if (valid[i] && (best == vis.size() || gates[i] < gates[best])) best = i;
    }
    if (best == vis.size()) throw ag::EmptyVisibleSetError("record has no valid cell");
    vis[best] = 1;
  }
  return vis;
}

std::vector<std::size_t> valid_indices(std::span<const std::uint8_t> valid) {
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < valid.size(); ++i) {
    if (valid[i]) ids.push_back(i);
  }
  return ids;
}

constexpr ParamGroup kMaskerGroups[] = {ParamGroup::masker};
constexpr ParamGroup kEncoderGroups[] = {ParamGroup::encoder, ParamGroup::selector, ParamGroup::text};

std::map<std::string, Tensor> collect_grads(const BoundParams& p) {
  std::map<std::string, Tensor> grads;
  for (const auto& [name, var] : p.vars()) {
    if (var.requires_grad()) grads.emplace(name, var.grad());
  }
  return grads;
}

void check_finite(const LossTerms& t, const char* where) {
  const double a = t.align.value().item(), c = t.cons.value().item(), b = t.budget.value().item();
  if (std::isfinite(a) && std::isfinite(c) && std::isfinite(b)) return;
  std::ostringstream os;
  os << "non-finite loss in " << where << ": L_align=" << a << " L_cons=" << c << " L_budget=" << b
     << " mean_gate=" << t.mean_gate;
  throw NumericError(os.str());
}

StepReport report_of(const LossTerms& t, double objective) {
  return {t.align.value().item(), t.cons.value().item(), t.budget.value().item(),
          t.total.value().item(), objective, t.mean_gate};
}

}  // namespace

LossTerms forward_losses(const BoundParams& p, const StepBatch& batch, const StepNoise& noise,
                         const ModelConfig& model, const TrainConfig& train,
                         double mask_temperature, bool freeze_gates) {
  ag::Tape& tape = p.tape();
  ag::Var h = encode_tokens(p, tape.constant(batch.patches));
  ag::Var gates;
  if (train.masking == Masking::adversarial) {
    gates = adversarial_gates(masker_logits(p, h), noise.gumbel, mask_temperature, batch.valid);
    if (freeze_gates) gates = ag::stop_gradient(gates);
  } else {
    gates = tape.constant(noise.random_gates);
  }
  const auto vis = visible_with_fallback(gates.value(), batch.valid, batch.cells);
  Pooled pooled = select_and_pool(p, mask_tokens(h, gates), vis, batch.cells, model.pooling);
  ag::Var u = encode_report(p, batch.report_ids, batch.report_length);

  LossTerms t;
  t.gates = gates;
  t.align = loss_align(pooled.embedding, u, model.temperature);
  if (train.lambda_cons > 0.0) {
    ag::Var hc = encode_tokens(p, tape.constant(batch.clean_patches));
    t.cons = loss_cons(pooled.embedding, full_view_embed(hc, batch.clean_valid, batch.cells));
  } else {
    t.cons = tape.constant(Tensor::scalar(0.0));
  }
  const auto ids = valid_indices(batch.valid);
  ag::Var valid_gates = ag::gather_rows(gates, ids);
  t.mean_gate = valid_gates.value().size() ? ag::mean(ag::stop_gradient(valid_gates)).value().item() : 0.0;
  t.budget = loss_budget(valid_gates, model.budget);
  t.total = ag::add(ag::add(t.align, ag::scale(t.cons, train.lambda_cons)),
                    ag::scale(t.budget, train.lambda_mask));
  return t;
}

void adam_update(ScarParams& params, const std::map<std::string, Tensor>& grads, AdamState& state,
                 const TrainConfig& cfg) {
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (const auto& [name, g] : grads) {
    Tensor& w = params.get(name);
    if (g.size() != w.size()) throw DimensionError("gradient shape mismatch for " + name);
    auto [mi, m_new] = state.m.try_emplace(name, w.shape(), 0.0);
    auto [vi, v_new] = state.v.try_emplace(name, w.shape(), 0.0);
    Tensor& m = mi->second;
    Tensor& v = vi->second;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      w[i] -= cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
    }
  }
}

StepReport masker_step(ScarParams& params, AdamState& state, const StepBatch& batch,
                       const StepNoise& noise, const ModelConfig& model, const TrainConfig& train,
                       double mask_temperature) {
  if (train.masking != Masking::adversarial) throw ConfigError("masker_step needs adversarial masking");
  ag::Tape tape;
  BoundParams p(tape, params, kMaskerGroups);
  LossTerms t = forward_losses(p, batch, noise, model, train, mask_temperature, false);
  check_finite(t, "masker step");
  ag::Var disruption = train.masker_maximizes_consistency
                           ? ag::add(t.align, ag::scale(t.cons, train.lambda_cons))
                           : t.align;
  ag::Var objective = ag::add(ag::neg(disruption), ag::scale(t.budget, train.lambda_mask));
  tape.backward(objective);
  adam_update(params, collect_grads(p), state, train);
  return report_of(t, objective.value().item());
}

StepReport encoder_step(ScarParams& params, AdamState& state, const StepBatch& batch,
                        const StepNoise& noise, const ModelConfig& model, const TrainConfig& train,
                        double mask_temperature) {
  ag::Tape tape;
  BoundParams p(tape, params, kEncoderGroups);
  LossTerms t = forward_losses(p, batch, noise, model, train, mask_temperature, true);
  check_finite(t, "encoder step");
  ag::Var objective = ag::add(t.align, ag::scale(t.cons, train.lambda_cons));
  tape.backward(objective);
  adam_update(params, collect_grads(p), state, train);
  return report_of(t, objective.value().item());
}

StepReport evaluate_losses(const ScarParams& params, const StepBatch& batch, const StepNoise& noise,
                           const ModelConfig& model, const TrainConfig& train,
                           double mask_temperature) {
  ag::Tape tape;
  BoundParams p(tape, params, {});
  LossTerms t = forward_losses(p, batch, noise, model, train, mask_temperature, true);
  return report_of(t, t.total.value().item());
}

// ---- training loop ------------------------------------------------------------

std::string metrics_csv(std::span<const EpochMetrics> history) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,L_align,L_cons,L_budget,mean_gate,val_auroc\n";
  for (const auto& m : history) {
    os << m.epoch << ',' << m.align << ',' << m.cons << ',' << m.budget << ',' << m.mean_gate << ',';
    if (m.val_auroc) os << *m.val_auroc;
    os << '\n';
  }
  return os.str();
}

TrainResult train(const Corpus& corpus, const ModelConfig& model, const TrainConfig& cfg,
                  const TrainHooks& hooks) {
  cfg.validate();
  model.validate();
  if (corpus.train.size() < cfg.batch_size) throw ConfigError("train split smaller than one batch");
  const CorpusConfig& cc = corpus.config;
  const Geometry geom = Geometry::of(cc);
  const auto aug_cfg = MissingnessConfig::pretraining();

  TrainResult result;
  result.params = init_params(model, derive_seed(cfg.seed, 0x1417));
  AdamState masker_state, encoder_state;

  const std::size_t n = corpus.train.size();
  const std::size_t batches_per_epoch = (n / cfg.batch_size) + ((n % cfg.batch_size) >= 2 ? 1 : 0);
  const std::size_t rounds = std::max(cfg.masker_steps, cfg.encoder_steps);
  const std::uint64_t total_steps = cfg.epochs * batches_per_epoch;
  std::uint64_t step = 0;

  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(cfg.seed, 0x5f, epoch));
    shuffle_range(order.begin(), order.end(), shuffle_rng);

    EpochMetrics em;
    em.epoch = epoch;
    std::size_t counted = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      if (stop - start < 2) break;
      std::vector<SignalRecord> augmented;
      std::vector<const SignalRecord*> clean, aug_ptrs;
      augmented.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        const SignalRecord& r = corpus.train[order[i]];
        clean.push_back(&r);
        augmented.push_back(cfg.augment
                                ? pretrain_augment(r, geom, aug_cfg, derive_seed(cfg.seed, 0xa0, epoch, i))
                                : r);
      }
      for (const auto& r : augmented) aug_ptrs.push_back(&r);
      const StepBatch batch = make_step_batch(aug_ptrs, clean, cc);
      const double progress =
          total_steps > 1 ? static_cast<double>(step) / static_cast<double>(total_steps - 1) : 1.0;
      const double tau_m = model.mask_temperature(progress);

      StepReport last{};
      for (std::size_t r = 0; r < rounds; ++r) {
        if (cfg.masking == Masking::adversarial && r < cfg.masker_steps) {
          const StepNoise noise = draw_step_noise(batch, model.budget, derive_seed(cfg.seed, step, 1, r));
          masker_step(result.params, masker_state, batch, noise, model, cfg, tau_m);
        }
        if (r < cfg.encoder_steps) {
          const StepNoise noise = draw_step_noise(batch, model.budget, derive_seed(cfg.seed, step, 2, r));
          last = encoder_step(result.params, encoder_state, batch, noise, model, cfg, tau_m);
        }
      }
      em.align += last.align;
      em.cons += last.cons;
      em.budget += last.budget;
      em.mean_gate += last.mean_gate;
      ++counted;
      ++step;
    }
    const double denom = static_cast<double>(std::max<std::size_t>(1, counted));
    em.align /= denom;
    em.cons /= denom;
    em.budget /= denom;
    em.mean_gate /= denom;
    if (cfg.val_every > 0 && !corpus.val.empty() && (epoch % cfg.val_every == 0 || epoch == cfg.epochs)) {
      const Tensor prompts = prompt_embeddings(result.params, model, cc);
      const Tensor scores = zero_shot_scores(result.params, model, prompts, corpus.val);
      em.val_auroc = macro_auroc(scores, stack_labels(corpus.val));
    }
    result.history.push_back(em);
    if (hooks.on_epoch) hooks.on_epoch(em);
    if (hooks.checkpoint_dir && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      save_checkpoint({model, result.params, step},
                      *hooks.checkpoint_dir / ("checkpoint_epoch_" + std::to_string(epoch) + ".json"));
    }
  }
  result.steps = step;
  return result;
}

double validation_mean_gate(const ScarParams& params, const ModelConfig& model,
                            std::span<const SignalRecord> records, std::uint64_t seed) {
  double total = 0.0;
  std::size_t count = 0;
  Rng rng(derive_seed(seed, 0x9a7e));
  const double tau = model.mask_temperature(1.0);
  for (const auto& r : records) {
    const auto logits = masker_cell_logits(params, model, r);
    TokenGrid grid = patchify(r.signal, r.missing, model.patch_length);
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double noise = gumbel(rng);
      if (!grid.cell_valid[i]) continue;
      const double x = (logits[i] + noise) / tau;
      total += x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      ++count;
    }
  }
  if (count == 0) throw ag::EmptyVisibleSetError("no valid cells to average gates over");
  return total / static_cast<double>(count);
}

AdversarialityReport masker_adversariality(const ScarParams& params, const ModelConfig& model,
                                           const CorpusConfig& corpus,
                                           std::span<const SignalRecord> records,
                                           std::size_t batch_size, std::uint64_t seed) {
  TrainConfig eval_cfg;
  eval_cfg.masking = Masking::random;
  eval_cfg.lambda_cons = 0.0;
  const double tau = model.mask_temperature(1.0);
  AdversarialityReport rep;
  std::size_t batches = 0;
  for (std::size_t start = 0; start + 2 <= records.size(); start += batch_size) {
    const std::size_t stop = std::min(records.size(), start + batch_size);
    std::vector<const SignalRecord*> ptrs;
    for (std::size_t i = start; i < stop; ++i) ptrs.push_back(&records[i]);
    const StepBatch batch = make_step_batch(ptrs, ptrs, corpus);
    StepNoise noise = draw_step_noise(batch, model.budget, derive_seed(seed, start));
    // Harden the masker's gates, then draw random gates with the same count per record.
    {
      ag::Tape tape;
      BoundParams p(tape, params, {});
      ag::Var h = encode_tokens(p, tape.constant(batch.patches));
      const Tensor g = adversarial_gates(masker_logits(p, h), noise.gumbel, tau, batch.valid).value();
      for (std::size_t i = 0; i < g.size(); ++i) noise.random_gates[i] = g[i] >= 0.5 ? 1.0 : 0.0;
    }
    StepNoise shuffled = noise;
    Rng rng(derive_seed(seed, 0x5e1, start));
    for (std::size_t base = 0; base < shuffled.random_gates.size(); base += batch.cells) {
      std::vector<std::size_t> cells;
      std::size_t masked = 0;
      for (std::size_t i = base; i < base + batch.cells; ++i) {
        if (!batch.valid[i]) continue;
        cells.push_back(i);
        masked += noise.random_gates[i] > 0.5 ? 1 : 0;
      }
      shuffle_range(cells.begin(), cells.end(), rng);
      for (std::size_t k = 0; k < cells.size(); ++k) shuffled.random_gates[cells[k]] = k < masked ? 1.0 : 0.0;
    }
    rep.masker_align += evaluate_losses(params, batch, noise, model, eval_cfg, tau).align;
    rep.random_align += evaluate_losses(params, batch, shuffled, model, eval_cfg, tau).align;
    ++batches;
  }
  if (batches == 0) throw ConfigError("adversariality check needs at least two records");
  rep.masker_align /= static_cast<double>(batches);
  rep.random_align /= static_cast<double>(batches);
  return rep;
}

}  // namespace scar
