// Acceptance suite: prints one PASS/FAIL line per criterion A1..A12.
//
// Usage: scar_acceptance [--work DIR] [--fresh] [--strict]
//   --work    directory for the shared corpus, reference and trained runs
//             (default: acceptance_runs); trained runs are reused when their
//             config matches
//   --fresh   delete the work directory first
//   --strict  exit with status 1 when any criterion fails
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fd_oracle.hpp"
#include "micro_model.hpp"
#include "scar/diagnostics.hpp"
#include "scar/evaluation.hpp"
#include "scar/inference.hpp"
#include "scar/lab.hpp"
#include "scar/metrics.hpp"
#include "scar/missingness.hpp"
#include "scar/rng.hpp"

namespace fs = std::filesystem;
using namespace scar;
using nlohmann::json;
using scar::testing::check_gradients;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

class Verdicts {
 public:
  void add(const std::string& id, bool pass, const std::string& detail) {
    std::cout << id << (id.size() < 3 ? "  " : " ") << (pass ? "PASS" : "FAIL") << "  " << detail << std::endl;
    passed_ += pass ? 1 : 0;
    ++total_;
  }
  void error(const std::string& id, const std::string& what) { add(id, false, "error: " + what); }
  std::size_t passed() const { return passed_; }
  std::size_t total() const { return total_; }

 private:
  std::size_t passed_ = 0;
  std::size_t total_ = 0;
};

void guarded(Verdicts& v, const std::string& id, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    v.error(id, e.what());
  }
}

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape), 0.0);
  for (auto& x : t.data()) x = uniform(rng, lo, hi);
  return t;
}

ag::Var probe(ag::Tape& tape, ag::Var y, std::uint64_t seed) {
  return ag::sum(ag::mul(y, tape.constant(random_tensor(y.value().shape(), seed))));
}

// ---- A1 ------------------------------------------------------------------------

double max_op_gradient_error() {
  using Builder = scar::testing::LossBuilder;
  struct Case {
    Builder build;
    std::vector<Tensor> inputs;
  };
  auto unary = [](std::function<ag::Var(ag::Var)> op, std::uint64_t seed) {
    return Builder([op, seed](ag::Tape& t, const std::vector<ag::Var>& x) { return probe(t, op(x[0]), seed); });
  };
  auto binary = [](std::function<ag::Var(ag::Var, ag::Var)> op, std::uint64_t seed) {
    return Builder(
        [op, seed](ag::Tape& t, const std::vector<ag::Var>& x) { return probe(t, op(x[0], x[1]), seed); });
  };
  const std::vector<std::uint8_t> active{1, 0, 1, 1, 1, 1, 0, 1};
  const std::vector<std::uint8_t> one_set{0, 1, 1, 0, 1};
  const std::vector<std::size_t> ids{2, 0, 2, 1};
  const std::vector<Case> cases{
      {unary([](ag::Var a) { return ag::neg(a); }, 1), {random_tensor({3, 4}, 1)}},
      {unary([](ag::Var a) { return ag::scale(a, -2.5); }, 2), {random_tensor({3, 4}, 2)}},
      {unary([](ag::Var a) { return ag::add_scalar(a, 0.7); }, 3), {random_tensor({3, 4}, 3)}},
      {unary([](ag::Var a) { return ag::sigmoid(a); }, 4), {random_tensor({3, 4}, 4, -3, 3)}},
      {unary([](ag::Var a) { return ag::exp(a); }, 5), {random_tensor({3, 4}, 5)}},
      {unary([](ag::Var a) { return ag::log(a); }, 6), {random_tensor({3, 4}, 6, 0.5, 2)}},
      {unary([](ag::Var a) { return ag::tanh(a); }, 7), {random_tensor({3, 4}, 7, -2, 2)}},
      {unary([](ag::Var a) { return ag::relu(a); }, 8), {random_tensor({3, 4}, 8, 0.1, 1)}},
      {unary([](ag::Var a) { return ag::relu(a); }, 9), {random_tensor({3, 4}, 9, -1, -0.1)}},
      {unary([](ag::Var a) { return ag::square(a); }, 10), {random_tensor({3, 4}, 10)}},
      {unary([](ag::Var a) { return ag::transpose(a); }, 11), {random_tensor({3, 4}, 11)}},
      {unary([](ag::Var a) { return ag::row_normalize(a); }, 12), {random_tensor({3, 4}, 12, 0.2, 1)}},
      {unary([](ag::Var a) { return ag::logsumexp_rows(a); }, 13), {random_tensor({3, 4}, 13, -2, 2)}},
      {unary([](ag::Var a) { return ag::diagonal(a); }, 14), {random_tensor({4, 4}, 14)}},
      {unary([&](ag::Var a) { return ag::gather_rows(a, ids); }, 15), {random_tensor({3, 2}, 15)}},
      {unary([&](ag::Var a) { return ag::segment_softmax(a, active, 4); }, 16), {random_tensor({8, 1}, 16, -2, 2)}},
      {unary([&](ag::Var a) { return ag::softmax_over_set(a, one_set); }, 17), {random_tensor({5, 1}, 17, -2, 2)}},
      {Builder([](ag::Tape&, const std::vector<ag::Var>& x) { return ag::sum(ag::square(x[0])); }),
       {random_tensor({2, 5}, 18)}},
      {Builder([](ag::Tape&, const std::vector<ag::Var>& x) { return ag::mean(ag::tanh(x[0])); }),
       {random_tensor({2, 5}, 19)}},
      {binary([](ag::Var a, ag::Var b) { return ag::add(a, b); }, 20), {random_tensor({3, 2}, 20), random_tensor({3, 2}, 21)}},
      {binary([](ag::Var a, ag::Var b) { return ag::sub(a, b); }, 22), {random_tensor({3, 2}, 22), random_tensor({}, 23)}},
      {binary([](ag::Var a, ag::Var b) { return ag::mul(a, b); }, 24), {random_tensor({}, 24), random_tensor({3, 2}, 25)}},
      {binary([](ag::Var a, ag::Var b) { return ag::mul(a, b); }, 26), {random_tensor({3, 2}, 26), random_tensor({3, 2}, 27)}},
      {binary([](ag::Var a, ag::Var b) { return ag::matmul(a, b); }, 28), {random_tensor({3, 4}, 28), random_tensor({4, 2}, 29)}},
      {binary([](ag::Var a, ag::Var b) { return ag::add_bias(a, b); }, 30), {random_tensor({3, 4}, 30), random_tensor({4}, 31)}},
      {binary([](ag::Var a, ag::Var b) { return ag::scale_rows(a, b); }, 32), {random_tensor({3, 4}, 32), random_tensor({3, 1}, 33)}},
      {binary([](ag::Var a, ag::Var b) { return ag::segment_weighted_sum(a, b, 3); }, 34),
       {random_tensor({6, 4}, 34), random_tensor({6, 1}, 35)}},
      {binary([](ag::Var a, ag::Var b) { return ag::row_cosine(a, b); }, 36), {random_tensor({3, 4}, 36), random_tensor({3, 4}, 37)}},
      {Builder([](ag::Tape&, const std::vector<ag::Var>& x) { return ag::cosine_sim(x[0], x[1]); }),
       {random_tensor({5}, 38), random_tensor({5}, 39)}},
  };
  double worst = 0.0;
  for (const auto& c : cases) worst = std::max(worst, check_gradients(c.build, c.inputs).max_rel_error);
  return worst;
}

void check_a1(Verdicts& v) {
  const auto t0 = Clock::now();
  const double ops = max_op_gradient_error();
  double composite = 0.0;
  std::string worst;
  int checked = 0;
  for (std::uint64_t seed = 1; checked < 3 && seed < 20; ++seed) {
    const auto m = scar::testing::make_micro(seed);
    if (scar::testing::gate_margin(m) < 1e-3) continue;
    ++checked;
    const auto rep = scar::testing::composite_fd_check(m);
    if (rep.max_rel_error >= composite) {
      composite = rep.max_rel_error;
      worst = rep.worst_param;
    }
  }
  const double elapsed = seconds_since(t0);
  const bool pass = ops < 1e-4 && composite < 1e-4 && checked == 3 && elapsed < 10.0;
  v.add("A1", pass,
        "max rel error ops " + sci(ops) + ", composite " + sci(composite) + " (" + worst + ", " +
            std::to_string(checked) + " seeds), " + fmt(elapsed, 2) + " s");
}

// ---- A2 / A3 --------------------------------------------------------------------

void check_a2(Verdicts& v) {
  double infonce = 0.0;
  for (std::size_t B : {2u, 3u, 7u, 16u}) {
    ag::Tape tape;
    Tensor z = Tensor::matrix(B, 3, 0.0), u = Tensor::matrix(B, 3, 0.0);
    for (std::size_t i = 0; i < B; ++i) {
      z[i * 3] = 1.0 + static_cast<double>(i);
      u[i * 3 + 1] = 2.0;
      u[i * 3] = 0.5;
    }
    const double val = loss_align(tape.constant(z), tape.constant(u), 0.07).value().item();
    infonce = std::max(infonce, std::abs(val - std::log(static_cast<double>(B))));
  }
  ag::Tape tape;
  const Tensor z({2, 3}, std::vector<double>{1, 2, 3, -1, 0.5, 2});
  const double cons = std::abs(loss_cons(tape.constant(z), tape.constant(z)).value().item());
  const Tensor g({4, 1}, std::vector<double>{0.25, 0.25, 0.25, 0.25});
  const double budget = std::abs(loss_budget(tape.constant(g), 0.25).value().item());
  const auto m = scar::testing::make_micro(5, 0.7, 3.0);
  ag::Tape t2;
  BoundParams p(t2, m.params, {});
  const LossTerms t = forward_losses(p, m.batch, m.noise, m.model, m.train, 0.8, false);
  const double total = std::abs(t.total.value().item() - (t.align.value().item() + 0.7 * t.cons.value().item() +
                                                          3.0 * t.budget.value().item()));
  const bool pass = infonce < 1e-9 && cons < 1e-12 && budget == 0.0 && total < 1e-12;
  v.add("A2", pass,
        "|InfoNCE - ln B| " + sci(infonce) + ", L_cons(z,z) " + sci(cons) + ", L_budget at rho " + sci(budget) +
            ", total vs weighted sum " + sci(total));
}

void check_a3(Verdicts& v) {
  double leak = 0.0, smallest_partial = 1e300;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto rep = scar::testing::consistency_stop_gradient(scar::testing::make_micro(seed));
    leak = std::max(leak, rep.full_view_max_abs);
    smallest_partial = std::min(smallest_partial, rep.partial_view_norm);
  }
  v.add("A3", leak == 0.0 && smallest_partial > 0.0,
        "max |dL_cons/d full-view params| " + sci(leak) + ", partial-view gradient norm >= " + sci(smallest_partial));
}

// ---- A5 / A6 / A11 ----------------------------------------------------------------

void check_a5(Verdicts& v, const Corpus& corpus, const ReferenceModel& ref) {
  const ImpactFn impact = reference_impact(ref);
  const Geometry geom = Geometry::of(corpus.config);
  std::size_t agree = 0;
  const std::size_t n = 50;
  for (std::size_t i = 0; i < n; ++i) {
    const SignalRecord& r = corpus.test[i];
    const MaskSpec base = sample_random_mask(MaskKind::joint, geom, MissingnessConfig::evaluation(), 500 + i);
    const auto cands = equal_budget_candidates(base, 16, 900 + i);
    std::size_t best = 0;
    double best_v = -1e300;
    for (std::size_t k = 0; k < cands.size(); ++k) {
      const double val = impact(r, std::span<const MaskSpec>(&cands[k], 1))[0];
      if (val > best_v) {
        best_v = val;
        best = k;
      }
    }
    agree += select_hard_mask(r, cands, impact) == best;
  }
  v.add("A5", agree == n, std::to_string(agree) + "/" + std::to_string(n) + " records agree with naive argmax");
}

CmrsRow ledger_row(double s, double i, double r) {
  CmrsRow x;
  x.severity = s;
  x.impact = i;
  x.resolution = r;
  return x;
}

void check_a6(Verdicts& v) {
  const std::vector<CmrsRow> hand{ledger_row(0.1, 0.5, 0.8), ledger_row(0.2, 0.2, 0.6), ledger_row(0.3, 0.0, 0.1)};
  const double hand_err = std::abs(*cmrs(hand) - 0.064 / 0.09);
  const std::vector<CmrsRow> resolved{ledger_row(0.1, 0.4, 1.0), ledger_row(0.3, 0.2, 1.0)};
  const bool all_one = *cmrs(resolved) == 1.0;
  std::vector<CmrsRow> base{ledger_row(0.1, 0.4, 0.3), ledger_row(0.3, 0.2, 0.9)};
  const double before = *cmrs(base);
  base.push_back(ledger_row(0.5, 0.0, 0.0));
  base.push_back(ledger_row(0.9, 0.0, 1.0));
  const bool noop = *cmrs(base) == before;
  const std::vector<CmrsRow> tiny{ledger_row(1e-5, 1e-5, 0.5), ledger_row(0.0, 0.4, 1.0)};
  const bool undefined = !cmrs(tiny).has_value();
  v.add("A6", hand_err < 1e-12 && all_one && noop && undefined,
        "hand ledger error " + sci(hand_err) + ", all R=1 " + (all_one ? "1" : "!=1") + ", zero-impact rows " +
            (noop ? "no-op" : "changed value") + ", tiny S*I " + (undefined ? "undefined" : "defined"));
}

std::optional<double> pair_count_auroc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  if (pairs == 0.0) return std::nullopt;
  return wins / pairs;
}

void check_a11(Verdicts& v) {
  Rng rng(11);
  std::size_t exact = 0, instances = 0;
  double worst = 0.0;
  while (instances < 200) {
    const std::size_t n = 2 + uniform_index(rng, 30), k = 1 + uniform_index(rng, 4);
    Tensor scores = Tensor::matrix(n, k);
    std::vector<std::uint8_t> labels(n * k);
    for (std::size_t i = 0; i < n * k; ++i) {
      scores[i] = static_cast<double>(uniform_index(rng, 6)) / 5.0;
      labels[i] = uniform01(rng) < 0.4;
    }
    double total = 0.0;
    std::size_t valid = 0;
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<double> s(n);
      std::vector<std::uint8_t> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = scores[i * k + c];
        y[i] = labels[i * k + c];
      }
      if (const auto a = pair_count_auroc(s, y)) {
        total += *a;
        ++valid;
      }
    }
    if (valid == 0) continue;
    ++instances;
    const double expected = total / static_cast<double>(valid);
    const double got = macro_auroc(scores, labels);
    exact += got == expected;
    worst = std::max(worst, std::abs(got - expected));
  }
  v.add("A11", exact == instances,
        std::to_string(exact) + "/" + std::to_string(instances) + " instances bit-equal to pair counting, max diff " +
            sci(worst));
}

// ---- trained models ---------------------------------------------------------------

const std::vector<std::string> kVariants{"Full Model", "Adv. Mask + Selector", "Adv. Mask + Mean Pool",
                                         "Random Mask + Mean Pool"};
const std::vector<std::uint64_t> kSeeds{7, 8, 9};

std::string slug(const std::string& name) {
  std::string s;
  for (char c : name) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!s.empty() && s.back() != '_') {
      s += '_';
    }
  }
  while (!s.empty() && s.back() == '_') s.pop_back();
  return s;
}

json read_json_or_null(const fs::path& p) {
  if (!fs::exists(p)) return nullptr;
  return json::parse(read_text(p));
}

struct Workspace {
  fs::path dir;
  RunConfig base;
  Corpus corpus;
  double corpus_seconds = 0.0;
  double reference_seconds = 0.0;
  ReferenceModel reference;
  EvalMasks masks;
  double masks_seconds = 0.0;
};

Workspace prepare(const fs::path& dir) {
  Workspace w;
  w.dir = dir;
  fs::create_directories(dir);
  json timing = read_json_or_null(dir / "timing.json");
  if (timing.is_null()) timing = json::object();
  const fs::path corpus_dir = dir / "corpus";
  if (!fs::exists(corpus_dir / "manifest.json")) {
    const auto t0 = Clock::now();
    cmd_gen(w.base, corpus_dir);
    timing["corpus_seconds"] = seconds_since(t0);
  }
  w.base.corpus_dir = fs::absolute(corpus_dir).string();
  w.corpus = load_run_corpus(w.base);
  const std::uint64_t ref_seed = w.base.reference_seeds.front();
  if (!fs::exists(dir / ("reference_" + std::to_string(ref_seed) + ".json"))) {
    const auto t0 = Clock::now();
    w.reference = run_reference(dir, w.base, w.corpus, ref_seed);
    timing["reference_seconds"] = seconds_since(t0);
  } else {
    w.reference = run_reference(dir, w.base, w.corpus, ref_seed);
  }
  const auto t0 = Clock::now();
  w.masks = build_eval_masks(w.corpus.test, Geometry::of(w.corpus.config), w.reference, w.base.eval);
  w.masks_seconds = seconds_since(t0);
  w.corpus_seconds = timing.value("corpus_seconds", 0.0);
  w.reference_seconds = timing.value("reference_seconds", 0.0);
  write_text(dir / "timing.json", timing.dump(2) + "\n");
  return w;
}

struct TrainedModel {
  std::string variant;
  std::uint64_t seed = 0;
  fs::path dir;
  Checkpoint checkpoint;
  double train_seconds = 0.0;
  bool reused = false;
  DecompositionTable table;
  double eval_seconds = 0.0;
};

TrainedModel train_or_reuse(const Workspace& w, const std::string& variant, std::uint64_t seed) {
  TrainedModel m;
  m.variant = variant;
  m.seed = seed;
  m.dir = w.dir / (slug(variant) + "_s" + std::to_string(seed));
  RunConfig cfg = w.base;
  cfg.variant = variant;
  cfg.seed = seed;
  const json key = cfg;
  const json stamp = read_json_or_null(m.dir / "acceptance_key.json");
  if (!stamp.is_null() && stamp.at("config") == key && fs::exists(m.dir / "checkpoint.json")) {
    m.reused = true;
    m.train_seconds = stamp.at("train_seconds").get<double>();
  } else {
    fs::remove_all(m.dir);
    std::clog << "[acceptance] training " << variant << " seed " << seed << std::endl;
    const auto t0 = Clock::now();
    cmd_train(cfg, m.dir, false);
    m.train_seconds = seconds_since(t0);
    write_text(m.dir / "acceptance_key.json",
               json{{"config", key}, {"train_seconds", m.train_seconds}}.dump(2) + "\n");
  }
  m.checkpoint = load_checkpoint(m.dir / "checkpoint.json");
  const auto t0 = Clock::now();
  m.table = decompose_by_missingness(m.checkpoint.params, m.checkpoint.config, w.corpus.config, w.corpus.test,
                                     w.reference, w.masks, w.base.eval);
  m.eval_seconds = seconds_since(t0);
  write_text(m.dir / "decompose.csv", decomposition_csv(m.table));
  return m;
}

double cmrs_or_zero(const ConditionResult& c) { return c.cmrs.value_or(0.0); }

void check_a4(Verdicts& v, const Workspace& w, const TrainedModel& full) {
  const double gate = validation_mean_gate(full.checkpoint.params, full.checkpoint.config, w.corpus.val, 1);
  const double rho = full.checkpoint.config.budget;
  v.add("A4", std::abs(gate - rho) < 0.05,
        "validation mean gate " + fmt(gate) + " vs budget " + fmt(rho, 2) + " (|diff| " + fmt(std::abs(gate - rho)) +
            ", tolerance 0.05)");
}

void check_a7(Verdicts& v, const Workspace& w, const TrainedModel& full) {
  const double trained = full.table.clean_auroc;
  const auto consistency =
      prompt_self_consistency(full.checkpoint.params, full.checkpoint.config, w.corpus.config, w.corpus.test);
  const double K = static_cast<double>(w.corpus.config.num_classes);
  const double chance = 1.0 / K;
  const double bar = chance + 3.0 * std::sqrt(chance * (1.0 - chance) / K);
  const ModelConfig model = model_config_for(w.corpus.config);
  const std::vector<std::uint8_t> labels = stack_labels(w.corpus.test);
  double total = 0.0, lo = 1.0, hi = 0.0;
  const std::uint64_t inits = 8;
  for (std::uint64_t s = 0; s < inits; ++s) {
    const ScarParams params = init_params(model, s);
    const Tensor prompts = prompt_embeddings(params, model, w.corpus.config);
    const double a = macro_auroc(zero_shot_scores(params, model, prompts, w.corpus.test), labels);
    total += a;
    lo = std::min(lo, a);
    hi = std::max(hi, a);
  }
  const double random_mean = total / static_cast<double>(inits);
  const bool pass = trained >= 0.85 && consistency.accuracy > bar && std::abs(random_mean - 0.5) <= 0.08;
  v.add("A7", pass,
        "trained clean AUROC " + fmt(trained) + " (bar 0.85), prompt self-consistency " + fmt(consistency.accuracy, 2) +
            " (bar > " + fmt(bar, 3) + "), random-init AUROC mean " + fmt(random_mean) + " over " +
            std::to_string(inits) + " inits (range " + fmt(lo, 3) + ".." + fmt(hi, 3) + ")");
}

struct VariantMeans {
  double clean = 0.0, rand = 0.0, hard = 0.0, cmrs_rand = 0.0;
  bool four_conditions = true;
};

std::map<std::string, VariantMeans> variant_means(const std::vector<TrainedModel>& models) {
  std::map<std::string, VariantMeans> out;
  std::map<std::string, double> counts;
  for (const auto& m : models) {
    auto& vm = out[m.variant];
    vm.clean += m.table.clean_auroc;
    vm.rand += m.table.at("Joint-Rand.").auroc;
    vm.hard += m.table.at("Joint-Hard").auroc;
    vm.cmrs_rand += cmrs_or_zero(m.table.at("Joint-Rand."));
    const std::string csv = decomposition_csv(m.table);
    for (const char* name : kConditionNames) vm.four_conditions = vm.four_conditions && csv.find(name) != std::string::npos;
    vm.four_conditions = vm.four_conditions && m.table.conditions.size() == 4;
    counts[m.variant] += 1.0;
  }
  for (auto& [name, vm] : out) {
    vm.clean /= counts[name];
    vm.rand /= counts[name];
    vm.hard /= counts[name];
    vm.cmrs_rand /= counts[name];
  }
  return out;
}

void check_a8(Verdicts& v, const std::map<std::string, VariantMeans>& means) {
  const auto& full = means.at("Full Model");
  const auto& sel = means.at("Adv. Mask + Selector");
  const auto& mean_pool = means.at("Adv. Mask + Mean Pool");
  const auto& random = means.at("Random Mask + Mean Pool");
  const bool auroc_order = full.rand >= sel.rand && sel.rand >= mean_pool.rand && full.rand >= random.rand;
  const bool cmrs_order = full.cmrs_rand >= sel.cmrs_rand && sel.cmrs_rand >= mean_pool.cmrs_rand &&
                          full.cmrs_rand >= random.cmrs_rand;
  const double gap = (full.rand - random.rand) * 100.0;
  std::ostringstream d;
  d << "Joint-Rand AUROC/CMRS means: Full " << fmt(full.rand) << "/" << fmt(full.cmrs_rand) << ", Adv+Sel "
    << fmt(sel.rand) << "/" << fmt(sel.cmrs_rand) << ", Adv+Mean " << fmt(mean_pool.rand) << "/"
    << fmt(mean_pool.cmrs_rand) << ", Rand+Mean " << fmt(random.rand) << "/" << fmt(random.cmrs_rand)
    << "; Full - Rand+Mean " << fmt(gap, 2) << " pts (bar 3)";
  v.add("A8", auroc_order && cmrs_order && gap >= 3.0, d.str());
}

void check_a9(Verdicts& v, const Workspace& w, const std::map<std::string, VariantMeans>& means,
              const TrainedModel& full) {
  bool ordered = true, four = true;
  std::ostringstream d;
  for (const auto& name : kVariants) {
    const auto& m = means.at(name);
    const bool ok = m.clean >= m.rand && m.rand >= m.hard;
    ordered = ordered && ok;
    four = four && m.four_conditions;
    d << name << " " << fmt(m.clean, 3) << ">=" << fmt(m.rand, 3) << ">=" << fmt(m.hard, 3) << (ok ? "" : " (violated)")
      << "; ";
  }
  const double pipeline = w.corpus_seconds + w.reference_seconds + full.train_seconds + w.masks_seconds + full.eval_seconds;
  d << "four conditions " << (four ? "emitted" : "missing") << "; default pipeline " << fmt(pipeline / 60.0, 2)
    << " min (bar 10)";
  v.add("A9", ordered && four && pipeline < 600.0, d.str());
}

void check_a10(Verdicts& v, const Workspace& w, const TrainedModel& full) {
  const CompensationStats s = compensation_stats(full.checkpoint.params, full.checkpoint.config, w.corpus.test);
  v.add("A10", s.increased_fraction >= 0.7 && s.overlap_ratio >= 2.0,
        "secondary alpha mass rose for " + fmt(s.increased_fraction, 3) + " of " + std::to_string(s.records) +
            " records (bar 0.70), top-budget evidence overlap " + fmt(s.overlap_rate, 3) + " vs chance " +
            fmt(s.chance_rate, 3) + " = " + fmt(s.overlap_ratio, 2) + "x (bar 2x)");
}

// ---- A12 -------------------------------------------------------------------------

void check_a12(Verdicts& v, const fs::path& dir) {
  const RunConfig defaults;
  const auto g1 = cmd_gen(defaults, dir / "det_corpus_a");
  const auto g2 = cmd_gen(defaults, dir / "det_corpus_b");
  const bool corpus_same = g1.manifest_hash == g2.manifest_hash;

  RunConfig tiny;
  tiny.corpus.train_records = 64;
  tiny.corpus.val_records = 24;
  tiny.corpus.test_records = 24;
  tiny.train.epochs = 3;
  tiny.reference.epochs = 2;
  tiny.reference.quality_gate = 0.0;
  tiny.probe.epochs = 20;
  std::vector<std::map<std::string, std::string>> files(2);
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path run = dir / ("det_run_" + std::to_string(rep));
    fs::remove_all(run);
    cmd_train(tiny, run, false);
    cmd_eval(run, EvalMode::zeroshot);
    cmd_eval(run, EvalMode::decompose);
    cmd_eval(run, EvalMode::cmrs);
    for (const auto& e : fs::directory_iterator(run)) {
      const auto name = e.path().filename().string();
      if (e.is_regular_file() && name != "config.json") files[rep][name] = read_text(e.path());
    }
  }
  std::size_t same = 0;
  bool csvs = true;
  for (const auto& [name, text] : files[0]) {
    const auto it = files[1].find(name);
    const bool eq = it != files[1].end() && it->second == text;
    same += eq;
    if (name.ends_with(".csv") || name == "checkpoint.json") csvs = csvs && eq;
  }
  const bool pass = corpus_same && csvs && same == files[0].size() && files[0].count("checkpoint.json") == 1;
  v.add("A12", pass,
        std::string("default corpus manifests ") + (corpus_same ? "identical" : "differ") + "; " +
            std::to_string(same) + "/" + std::to_string(files[0].size()) +
            " run files bit-identical (checkpoint, metrics, evaluation CSVs)");
  fs::remove_all(dir / "det_corpus_a");
  fs::remove_all(dir / "det_corpus_b");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scar acceptance suite"};
  std::string work = "acceptance_runs";
  bool fresh = false, strict = false;
  app.add_option("--work", work, "directory for shared artifacts and trained runs");
  app.add_flag("--fresh", fresh, "delete the work directory first");
  app.add_flag("--strict", strict, "exit with status 1 when any criterion fails");
  CLI11_PARSE(app, argc, argv);

  const fs::path dir = fs::absolute(work);
  if (fresh) fs::remove_all(dir);
  fs::create_directories(dir);

  Verdicts v;
  guarded(v, "A1", [&] { check_a1(v); });
  guarded(v, "A2", [&] { check_a2(v); });
  guarded(v, "A3", [&] { check_a3(v); });

  std::optional<Workspace> w;
  try {
    w = prepare(dir);
  } catch (const std::exception& e) {
    std::cerr << "[acceptance] workspace setup failed: " << e.what() << '\n';
  }

  std::vector<TrainedModel> models;
  std::optional<std::string> train_error;
  if (w) {
    try {
      for (auto seed : kSeeds) {
        for (const auto& variant : kVariants) models.push_back(train_or_reuse(*w, variant, seed));
      }
    } catch (const std::exception& e) {
      train_error = e.what();
    }
  }
  const bool trained = w && !train_error;
  const std::string missing = !w ? "workspace setup failed" : (train_error ? *train_error : "");
  const TrainedModel* full = trained ? &models.front() : nullptr;

  if (trained) {
    guarded(v, "A4", [&] { check_a4(v, *w, *full); });
  } else {
    v.error("A4", missing);
  }
  if (w) {
    guarded(v, "A5", [&] { check_a5(v, w->corpus, w->reference); });
  } else {
    v.error("A5", missing);
  }
  guarded(v, "A6", [&] { check_a6(v); });
  if (trained) {
    const auto means = variant_means(models);
    guarded(v, "A7", [&] { check_a7(v, *w, *full); });
    guarded(v, "A8", [&] { check_a8(v, means); });
    guarded(v, "A9", [&] { check_a9(v, *w, means, *full); });
    guarded(v, "A10", [&] { check_a10(v, *w, *full); });
  } else {
    for (const char* id : {"A7", "A8", "A9", "A10"}) v.error(id, missing);
  }
  guarded(v, "A11", [&] { check_a11(v); });
  guarded(v, "A12", [&] { check_a12(v, dir); });

  std::cout << "summary: " << v.passed() << "/" << v.total() << " criteria pass" << std::endl;
  return strict && v.passed() != v.total() ? 1 : 0;
}
