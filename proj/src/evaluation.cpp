#include "scar/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "scar/graph.hpp"
#include "scar/inference.hpp"
#include "scar/parallel.hpp"
#include "scar/rng.hpp"
#include "scar/training.hpp"

namespace scar {

using nlohmann::json;

void to_json(json& j, const ReferenceConfig& c) {
  j = json{{"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"learning_rate", c.learning_rate},
           {"quality_gate", c.quality_gate},
           {"seed", c.seed}};
}

void from_json(const json& j, ReferenceConfig& c) {
  ReferenceConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.quality_gate = j.value("quality_gate", d.quality_gate);
  c.seed = j.value("seed", d.seed);
  if (c.epochs == 0 || c.batch_size == 0 || !(c.learning_rate > 0.0)) {
    throw ConfigError("invalid reference training settings");
  }
}

void to_json(json& j, const EvalConfig& c) {
  j = json{{"lead_drop_prob", c.missingness.lead_drop_prob},
           {"span_ratio_min", c.missingness.span_ratio_min},
           {"span_ratio_max", c.missingness.span_ratio_max},
           {"candidates", c.candidates},
           {"seed", c.seed},
           {"agreement", agreement_kind_name(c.agreement)}};
  j["budget"] = c.budget ? json(*c.budget) : json(nullptr);
}

void from_json(const json& j, EvalConfig& c) {
  EvalConfig d;
  c.missingness.lead_drop_prob = j.value("lead_drop_prob", d.missingness.lead_drop_prob);
  c.missingness.span_ratio_min = j.value("span_ratio_min", d.missingness.span_ratio_min);
  c.missingness.span_ratio_max = j.value("span_ratio_max", d.missingness.span_ratio_max);
  c.candidates = j.value("candidates", d.candidates);
  c.seed = j.value("seed", d.seed);
  c.agreement = agreement_kind_from_name(j.value("agreement", std::string("mean_abs")));
  c.budget.reset();
  if (j.contains("budget") && !j["budget"].is_null()) c.budget = j["budget"].get<double>();
  if (c.candidates == 0) throw ConfigError("candidate pool must hold at least one mask");
  if (c.budget && !(*c.budget > 0.0 && *c.budget < 1.0)) throw ConfigError("budget must be in (0,1)");
}

// ---- reference model ------------------------------------------------------------

namespace {

// Mean binary cross-entropy with logits, stable for large |l|.
ag::Var bce_with_logits(ag::Var logits, const Tensor& targets) {
  const Tensor& l = logits.value();
  if (l.size() != targets.size()) throw DimensionError("bce: logits/targets size mismatch");
  const double n = static_cast<double>(l.size());
  double total = 0.0;
  for (std::size_t i = 0; i < l.size(); ++i) {
    total += std::max(l[i], 0.0) - l[i] * targets[i] + std::log1p(std::exp(-std::abs(l[i])));
  }
  const std::size_t id = logits.id();
  return logits.tape().record(Tensor::scalar(total / n), {id}, [id, targets, n](ag::Tape& t, std::size_t self) {
    const double up = t.grad(self).item();
    const Tensor& lv = t.value(id);
    Tensor& g = t.grad_buffer(id);
    for (std::size_t i = 0; i < lv.size(); ++i) {
      const double s = lv[i] >= 0 ? 1.0 / (1.0 + std::exp(-lv[i])) : std::exp(lv[i]) / (1.0 + std::exp(lv[i]));
      g[i] += up * (s - targets[i]) / n;
    }
  });
}

ag::Var reference_logits(const BoundParams& p, const TokenBatch& b) {
  ag::Tape& tape = p.tape();
  ag::Var h = encode_tokens(p, tape.constant(b.patches));
  ag::Var z = full_view_embed(h, b.valid, b.cells);
  return ag::add_bias(ag::matmul(z, p("head.w")), p("head.b"));
}

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

json params_to_json(const ScarParams& ps) {
  json arr = json::array();
  for (const auto& p : ps.params) {
    arr.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"data", p.value.data()}});
  }
  return arr;
}

}  // namespace

Tensor ReferenceModel::predict(std::span<const SignalRecord> records) const {
  const std::size_t n = records.size(), K = num_classes;
  Tensor out = Tensor::matrix(n, K);
  constexpr std::size_t chunk = 64;
  parallel_for((n + chunk - 1) / chunk, [&](std::size_t ci) {
    const std::size_t lo = ci * chunk, hi = std::min(n, lo + chunk);
    TokenBatch b = make_token_batch(records.subspan(lo, hi - lo), config.patch_length);
    ag::Tape tape;
    BoundParams p(tape, params, {});
    const Tensor l = reference_logits(p, b).value();
    for (std::size_t i = 0; i < l.size(); ++i) out[lo * K + i] = sigmoid(l[i]);
  });
  return out;
}

void ReferenceModel::require_quality(double gate) const {
  if (clean_test_auroc < gate) {
    std::ostringstream os;
    os << "reference model clean-test macro-AUROC " << clean_test_auroc << " is below the quality gate "
       << gate;
    throw DependencyError(os.str());
  }
}

ReferenceModel train_reference(const Corpus& corpus, const ReferenceConfig& cfg) {
  const CorpusConfig& cc = corpus.config;
  if (corpus.train.empty() || corpus.test.empty()) throw ConfigError("reference needs train and test splits");
  ReferenceModel ref;
  ref.config = model_config_for(cc);
  ref.num_classes = cc.num_classes;
  ref.seed = cfg.seed;
  const ScarParams base = init_params(ref.config, derive_seed(cfg.seed, 0x7ef));
  for (const auto& p : base.params) {
    if (p.group == ParamGroup::encoder) ref.params.params.push_back(p);
  }
  {
    Rng rng(derive_seed(cfg.seed, 0x7ef, 1));
    const std::size_t d = ref.config.embed_dim, K = cc.num_classes;
    const double a = std::sqrt(6.0 / static_cast<double>(d + K));
    Tensor w = Tensor::matrix(d, K);
    for (auto& v : w.data()) v = uniform(rng, -a, a);
    ref.params.params.push_back({"head.w", ParamGroup::encoder, std::move(w)});
    ref.params.params.push_back({"head.b", ParamGroup::encoder, Tensor({K}, 0.0)});
  }

  TrainConfig opt;
  opt.learning_rate = cfg.learning_rate;
  AdamState state;
  const ParamGroup groups[] = {ParamGroup::encoder};
  const std::size_t n = corpus.train.size();
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(cfg.seed, 0x7f0, epoch));
    shuffle_range(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      std::vector<const SignalRecord*> batch;
      Tensor targets = Tensor::matrix(stop - start, cc.num_classes);
      for (std::size_t i = start; i < stop; ++i) {
        const SignalRecord& r = corpus.train[order[i]];
        batch.push_back(&r);
        for (std::size_t k = 0; k < cc.num_classes; ++k) targets[(i - start) * cc.num_classes + k] = r.labels[k];
      }
      TokenBatch b = make_token_batch(std::span<const SignalRecord* const>(batch), cc.patch_length);
      ag::Tape tape;
      BoundParams p(tape, ref.params, groups);
      ag::Var loss = bce_with_logits(reference_logits(p, b), targets);
      if (!std::isfinite(loss.value().item())) throw NumericError("non-finite reference loss");
      tape.backward(loss);
      std::map<std::string, Tensor> grads;
      for (const auto& [name, var] : p.vars()) grads.emplace(name, var.grad());
      adam_update(ref.params, grads, state, opt);
    }
  }
  ref.clean_test_auroc = macro_auroc(ref.predict(corpus.test), stack_labels(corpus.test));
  return ref;
}

json reference_to_json(const ReferenceModel& ref) {
  return json{{"format", "scar-reference"},
              {"version", 1},
              {"seed", ref.seed},
              {"num_classes", ref.num_classes},
              {"clean_test_auroc", ref.clean_test_auroc},
              {"model_config", ref.config},
              {"params", params_to_json(ref.params)}};
}

ReferenceModel reference_from_json(const json& j) {
  if (j.value("format", std::string()) != "scar-reference") throw FormatError("not a reference model file");
  if (j.value("version", 0) != 1) throw FormatError("unsupported reference model version");
  ReferenceModel ref;
  ref.seed = j.at("seed").get<std::uint64_t>();
  ref.num_classes = j.at("num_classes").get<std::size_t>();
  ref.clean_test_auroc = j.at("clean_test_auroc").get<double>();
  ref.config = j.at("model_config").get<ModelConfig>();
  for (const auto& p : j.at("params")) {
    Tensor t(p.at("shape").get<std::vector<std::size_t>>(), p.at("data").get<std::vector<double>>());
    ref.params.params.push_back({p.at("name").get<std::string>(), ParamGroup::encoder, std::move(t)});
  }
  const Tensor& w = ref.params.get("head.w");
  if (w.cols() != ref.num_classes || w.rows() != ref.config.embed_dim) {
    throw FormatError("reference head shape does not match its config");
  }
  return ref;
}

void save_reference(const ReferenceModel& ref, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17) << reference_to_json(ref).dump() << '\n';
}

ReferenceModel load_reference(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("reference model not found: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return reference_from_json(j);
}

ImpactFn reference_impact(const ReferenceModel& ref, AgreementKind kind) {
  return [&ref, kind](const SignalRecord& record, std::span<const MaskSpec> candidates) {
    std::vector<SignalRecord> views;
    views.reserve(candidates.size() + 1);
    views.push_back(record);
    for (const auto& m : candidates) views.push_back(apply_mask(record, m));
    const Tensor probs = ref.predict(views);
    const std::size_t K = probs.cols();
    std::span<const double> p0(probs.raw(), K);
    std::vector<double> out(candidates.size());
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      out[c] = impact(p0, std::span<const double>(probs.raw() + (c + 1) * K, K), kind);
    }
    return out;
  };
}

// ---- masks and decomposition ----------------------------------------------------

const std::vector<MaskSpec>& EvalMasks::condition(std::size_t c) const {
  switch (c) {
    case 0: return lead_only;
    case 1: return temporal_only;
    case 2: return joint_rand;
    case 3: return joint_hard;
  }
  throw std::out_of_range("condition index");
}

EvalMasks build_eval_masks(std::span<const SignalRecord> records, const Geometry& geometry,
                           const ReferenceModel& ref, const EvalConfig& cfg) {
  const std::size_t n = records.size();
  EvalMasks m;
  m.lead_only.resize(n);
  m.temporal_only.resize(n);
  m.joint_rand.resize(n);
  m.joint_hard.resize(n);
  m.hard_index.resize(n);
  const ImpactFn fn = reference_impact(ref, cfg.agreement);
  auto draw = [&](MaskKind kind, std::size_t i) {
    const std::uint64_t seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(kind) + 1, records[i].id);
    return cfg.budget ? sample_mask_at_budget(kind, geometry, *cfg.budget, seed)
                      : sample_random_mask(kind, geometry, cfg.missingness, seed);
  };
  parallel_for(n, [&](std::size_t i) {
    m.lead_only[i] = draw(MaskKind::lead_only, i);
    m.temporal_only[i] = draw(MaskKind::temporal_only, i);
    m.joint_rand[i] = draw(MaskKind::joint, i);
    const auto pool = equal_budget_candidates(m.joint_rand[i], cfg.candidates,
                                              derive_seed(cfg.seed, 0xca9d, records[i].id));
    m.hard_index[i] = select_hard_mask(records[i], pool, fn);
    m.joint_hard[i] = pool[m.hard_index[i]];
  });
  return m;
}

const ConditionResult& DecompositionTable::at(const std::string& name) const {
  for (const auto& c : conditions) {
    if (c.name == name) return c;
  }
  throw std::out_of_range("no condition named " + name);
}

DecompositionTable decompose_by_missingness(const ScarParams& params, const ModelConfig& model,
                                            const CorpusConfig& corpus,
                                            std::span<const SignalRecord> records,
                                            const ReferenceModel& ref, const EvalMasks& masks,
                                            const EvalConfig& cfg) {
  if (records.empty()) throw ConfigError("decomposition needs test records");
  const Tensor prompts = prompt_embeddings(params, model, corpus);
  const auto labels = stack_labels(records);
  DecompositionTable table;
  table.clean_auroc = macro_auroc(zero_shot_scores(params, model, prompts, records), labels);
  const Tensor p0 = ref.predict(records);
  const std::size_t n = records.size(), K = p0.cols();
  for (std::size_t c = 0; c < 4; ++c) {
    const auto& ms = masks.condition(c);
    if (ms.size() != n) throw DimensionError("mask set does not match the records");
    std::vector<SignalRecord> masked;
    masked.reserve(n);
    for (std::size_t i = 0; i < n; ++i) masked.push_back(apply_mask(records[i], ms[i]));
    ConditionResult res;
    res.name = kConditionNames[c];
    res.scores = zero_shot_scores(params, model, prompts, masked);
    res.auroc = macro_auroc(res.scores, labels);
    const Tensor p_oracle = ref.predict(masked);
    const auto p_method = score_probabilities(res.scores.data(), model.temperature);
    for (std::size_t i = 0; i < n; ++i) {
      auto row = [&](const double* base) { return std::vector<double>(base + i * K, base + (i + 1) * K); };
      std::string mask_id = std::string(mask_kind_name(ms[i].kind)) + "-" + std::to_string(ms[i].seed);
      if (c == 3) mask_id += "-hard" + std::to_string(masks.hard_index[i]);
      res.ledger.push_back(make_cmrs_row(records[i].id, std::move(mask_id), row(p0.raw()), row(p_oracle.raw()),
                                         row(p_method.data()), severity(ms[i]), cfg.agreement));
      res.mean_impact += res.ledger.back().impact;
      res.mean_severity += res.ledger.back().severity;
    }
    res.mean_impact /= static_cast<double>(n);
    res.mean_severity /= static_cast<double>(n);
    res.cmrs = cmrs(res.ledger);
    table.conditions.push_back(std::move(res));
  }
  return table;
}

namespace {

std::string fmt(std::optional<double> v, int precision) {
  if (!v) return "undefined";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << *v;
  return os.str();
}

std::string render_grid(const std::vector<std::string>& header, const std::vector<std::string>& cells) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) width[i] = std::max(header[i].size(), cells[i].size());
  std::ostringstream os;
  for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "  " : "") << std::setw(static_cast<int>(width[i])) << header[i];
  os << '\n';
  for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "  " : "") << std::setw(static_cast<int>(width[i])) << cells[i];
  os << '\n';
  return os.str();
}

}  // namespace

std::string decomposition_csv(const DecompositionTable& t) {
  std::ostringstream os;
  os << "condition,AUROC,CMRS,mean_impact,mean_severity\n";
  os << "Clean," << fmt(t.clean_auroc * 100.0, 4) << ",,,\n";
  for (const auto& c : t.conditions) {
    os << c.name << ',' << fmt(c.auroc * 100.0, 4) << ','
       << (c.cmrs ? fmt(*c.cmrs * 100.0, 4) : std::string("undefined")) << ',' << fmt(c.mean_impact, 6) << ','
       << fmt(c.mean_severity, 6) << '\n';
  }
  return os.str();
}

std::string decomposition_text(const DecompositionTable& t) {
  std::vector<std::string> header, cells;
  for (const auto& c : t.conditions) {
    header.push_back(c.name + " AUROC");
    header.push_back(c.name + " CMRS");
    cells.push_back(fmt(c.auroc * 100.0, 2));
    cells.push_back(c.cmrs ? fmt(*c.cmrs * 100.0, 2) : "undefined");
  }
  return render_grid(header, cells);
}

std::string zeroshot_csv(const DecompositionTable& t) {
  const auto& r = t.at("Joint-Rand.");
  const auto& h = t.at("Joint-Hard");
  std::ostringstream os;
  os << "AUROC_Rand,CMRS_Rand,AUROC_Hard,CMRS_Hard\n";
  os << fmt(r.auroc * 100.0, 4) << ',' << (r.cmrs ? fmt(*r.cmrs * 100.0, 4) : "undefined") << ','
     << fmt(h.auroc * 100.0, 4) << ',' << (h.cmrs ? fmt(*h.cmrs * 100.0, 4) : "undefined") << '\n';
  return os.str();
}

std::string zeroshot_text(const DecompositionTable& t) {
  const auto& r = t.at("Joint-Rand.");
  const auto& h = t.at("Joint-Hard");
  return render_grid({"Rand. AUROC", "Rand. CMRS", "Hard AUROC", "Hard CMRS"},
                     {fmt(r.auroc * 100.0, 2), r.cmrs ? fmt(*r.cmrs * 100.0, 2) : "undefined",
                      fmt(h.auroc * 100.0, 2), h.cmrs ? fmt(*h.cmrs * 100.0, 2) : "undefined"});
}

std::vector<SensitivityRow> reference_sensitivity(const ScarParams& params, const ModelConfig& model,
                                                  const Corpus& corpus, const ReferenceConfig& base,
                                                  std::span<const std::uint64_t> seeds,
                                                  const EvalConfig& cfg) {
  std::vector<SensitivityRow> rows;
  for (auto seed : seeds) {
    ReferenceConfig rc = base;
    rc.seed = seed;
    const ReferenceModel ref = train_reference(corpus, rc);
    const EvalMasks masks = build_eval_masks(corpus.test, Geometry::of(corpus.config), ref, cfg);
    const DecompositionTable t =
        decompose_by_missingness(params, model, corpus.config, corpus.test, ref, masks, cfg);
    rows.push_back({seed, ref.clean_test_auroc, t.at("Joint-Rand.").cmrs, t.at("Joint-Hard").cmrs});
  }
  return rows;
}

std::string sensitivity_csv(std::span<const SensitivityRow> rows) {
  std::ostringstream os;
  os << "reference_seed,reference_auroc,CMRS_Rand,CMRS_Hard\n";
  for (const auto& r : rows) {
    os << r.reference_seed << ',' << fmt(r.reference_auroc, 6) << ','
       << (r.cmrs_rand ? fmt(*r.cmrs_rand, 6) : "undefined") << ','
       << (r.cmrs_hard ? fmt(*r.cmrs_hard, 6) : "undefined") << '\n';
  }
  return os.str();
}

}  // namespace scar
