#include "scar/lab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "scar/diagnostics.hpp"
#include "scar/metrics.hpp"
#include "scar/rng.hpp"
#include "scar/svg.hpp"

namespace scar {

namespace fs = std::filesystem;
using nlohmann::json;

void to_json(json& j, const ProbeConfig& c) {
  j = json{{"fractions", c.fractions}, {"epochs", c.epochs}, {"learning_rate", c.learning_rate}};
}

void from_json(const json& j, ProbeConfig& c) {
  ProbeConfig d;
  c.fractions = j.value("fractions", d.fractions);
  c.epochs = j.value("epochs", d.epochs);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  for (double f : c.fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("probe fractions must lie in (0,1]");
  }
}

void RunConfig::resolve() {
  corpus.validate();
  model.patch_length = corpus.patch_length;
  model.vocab_size = corpus.vocab_size;
  model.validate();
  train.seed = seed;
  probe.seed = seed;
  train.validate();
  variant_by_name(variant);
  if (reference_seeds.empty()) throw ConfigError("at least one reference seed is required");
  reference.seed = reference_seeds.front();
  if (sweep_lambda_cons.empty() || sweep_lambda_mask.empty()) throw ConfigError("sweep grid is empty");
}

void to_json(json& j, const RunConfig& c) {
  j = json{{"corpus", c.corpus},
           {"model", c.model},
           {"train", c.train},
           {"reference", c.reference},
           {"eval", c.eval},
           {"probe", c.probe},
           {"variant", c.variant},
           {"sweep", {{"lambda_cons", c.sweep_lambda_cons}, {"lambda_mask", c.sweep_lambda_mask}}},
           {"reference_seeds", c.reference_seeds},
           {"plot_records", c.plot_records},
           {"corpus_dir", c.corpus_dir},
           {"out", c.out},
           {"seed", c.seed}};
}

void from_json(const json& j, RunConfig& c) {
  static const std::set<std::string> known{"corpus", "model", "train", "reference", "eval",
                                           "probe", "variant", "sweep", "reference_seeds",
                                           "plot_records", "corpus_dir", "out", "seed"};
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  RunConfig d;
  c = d;
  if (j.contains("corpus")) c.corpus = j["corpus"].get<CorpusConfig>();
  if (j.contains("model")) c.model = j["model"].get<ModelConfig>();
  if (j.contains("train")) c.train = j["train"].get<TrainConfig>();
  if (j.contains("reference")) c.reference = j["reference"].get<ReferenceConfig>();
  if (j.contains("eval")) c.eval = j["eval"].get<EvalConfig>();
  if (j.contains("probe")) c.probe = j["probe"].get<ProbeConfig>();
  c.variant = j.value("variant", d.variant);
  if (j.contains("sweep")) {
    c.sweep_lambda_cons = j["sweep"].value("lambda_cons", d.sweep_lambda_cons);
    c.sweep_lambda_mask = j["sweep"].value("lambda_mask", d.sweep_lambda_mask);
  }
  c.reference_seeds = j.value("reference_seeds", d.reference_seeds);
  c.plot_records = j.value("plot_records", d.plot_records);
  c.corpus_dir = j.value("corpus_dir", d.corpus_dir);
  c.out = j.value("out", d.out);
  c.seed = j.value("seed", d.seed);
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path.string());
  try {
    json j;
    in >> j;
    RunConfig c = j.get<RunConfig>();
    c.resolve();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DependencyError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void save_run_config(const RunConfig& cfg, const fs::path& path) {
  write_text(path, json(cfg).dump(2) + "\n");
}

// ---- gen / train ----------------------------------------------------------------

GenResult cmd_gen(const RunConfig& cfg, const fs::path& out) {
  cfg.corpus.validate();
  const Corpus corpus = generate_corpus(cfg.corpus);
  const json manifest = export_corpus(corpus, out);
  return {corpus.train.size() + corpus.val.size() + corpus.test.size(), fnv1a_hex(manifest.dump())};
}

Corpus load_run_corpus(const RunConfig& cfg) {
  if (cfg.corpus_dir.empty() || !fs::exists(fs::path(cfg.corpus_dir) / "manifest.json")) {
    throw DependencyError("corpus not found at '" + cfg.corpus_dir + "'");
  }
  return import_corpus(cfg.corpus_dir);
}

TrainRun cmd_train(RunConfig cfg, const fs::path& out, bool verbose) {
  cfg.resolve();
  fs::create_directories(out);
  cfg.out = fs::absolute(out).string();
  Corpus corpus;
  if (cfg.corpus_dir.empty()) {
    const fs::path dir = fs::absolute(out) / "corpus";
    corpus = generate_corpus(cfg.corpus);
    export_corpus(corpus, dir);
    cfg.corpus_dir = dir.string();
  } else {
    corpus = load_run_corpus(cfg);
    cfg.corpus_dir = fs::absolute(cfg.corpus_dir).string();
  }
  cfg.corpus = corpus.config;
  cfg.resolve();
  apply_variant(variant_by_name(cfg.variant), cfg.model, cfg.train);
  save_run_config(cfg, out / "config.json");

  TrainHooks hooks;
  hooks.checkpoint_dir = out;
  std::vector<EpochMetrics> seen;
  hooks.on_epoch = [&](const EpochMetrics& m) {
    seen.push_back(m);
    write_text(out / "metrics.csv", metrics_csv(seen));
    if (verbose) {
      std::clog << "[scar] epoch " << m.epoch << "/" << cfg.train.epochs << " L_align=" << std::fixed
                << std::setprecision(4) << m.align << " L_cons=" << m.cons << " L_budget=" << m.budget
                << " mean_gate=" << m.mean_gate;
      if (m.val_auroc) std::clog << " val_auroc=" << *m.val_auroc;
      std::clog << std::defaultfloat << '\n';
    }
  };
  TrainRun run{cfg, train(corpus, cfg.model, cfg.train, hooks)};
  write_text(out / "metrics.csv", metrics_csv(run.result.history));
  save_checkpoint({cfg.model, run.result.params, run.result.steps}, out / "checkpoint.json");
  return run;
}

// ---- eval -----------------------------------------------------------------------

EvalMode eval_mode_from_name(const std::string& s) {
  if (s == "zeroshot") return EvalMode::zeroshot;
  if (s == "probe") return EvalMode::probe;
  if (s == "cmrs") return EvalMode::cmrs;
  if (s == "decompose") return EvalMode::decompose;
  throw ConfigError("unknown eval mode '" + s + "' (expected zeroshot, probe, cmrs or decompose)");
}

namespace {

struct LoadedRun {
  RunConfig config;
  Checkpoint checkpoint;
  Corpus corpus;
};

LoadedRun load_run(const fs::path& run_dir) {
  const fs::path cfg_path = run_dir / "config.json";
  if (!fs::exists(cfg_path)) throw DependencyError("no config.json in " + run_dir.string());
  LoadedRun r;
  r.config = load_run_config(cfg_path);
  const fs::path ck = run_dir / "checkpoint.json";
  if (!fs::exists(ck)) throw DependencyError("no checkpoint.json in " + run_dir.string());
  r.checkpoint = load_checkpoint(ck);
  r.corpus = load_run_corpus(r.config);
  return r;
}

std::string fixed(double v, int p) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(p) << v;
  return os.str();
}

std::string opt_fixed(std::optional<double> v, int p) { return v ? fixed(*v, p) : "undefined"; }

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

std::string masked_prediction_csv(const Corpus& corpus, const DecompositionTable& t, const Tensor& clean) {
  std::vector<SignalRecord> rows;
  std::vector<std::string> ids;
  std::vector<double> data;
  for (std::size_t i = 0; i < corpus.test.size(); ++i) {
    rows.push_back(corpus.test[i]);
    ids.push_back("none");
  }
  data = clean.data();
  for (const auto& c : t.conditions) {
    for (std::size_t i = 0; i < corpus.test.size(); ++i) {
      rows.push_back(corpus.test[i]);
      ids.push_back(c.ledger[i].mask_id);
    }
    data.insert(data.end(), c.scores.data().begin(), c.scores.data().end());
  }
  return prediction_csv(rows, ids, Tensor({rows.size(), clean.cols()}, std::move(data)));
}

}  // namespace

ReferenceModel run_reference(const fs::path& run_dir, const RunConfig& cfg, const Corpus& corpus,
                             std::uint64_t seed) {
  const fs::path path = run_dir / ("reference_" + std::to_string(seed) + ".json");
  ReferenceModel ref;
  if (fs::exists(path)) {
    ref = load_reference(path);
  } else {
    ReferenceConfig rc = cfg.reference;
    rc.seed = seed;
    ref = train_reference(corpus, rc);
    save_reference(ref, path);
  }
  ref.require_quality(cfg.reference.quality_gate);
  return ref;
}

std::string cmd_eval(const fs::path& run_dir, EvalMode mode, const EvalOverrides& ov) {
  LoadedRun run = load_run(run_dir);
  RunConfig& cfg = run.config;
  if (ov.seed) cfg.eval.seed = *ov.seed;
  if (ov.budget) cfg.eval.budget = *ov.budget;
  if (ov.candidates) cfg.eval.candidates = *ov.candidates;
  if (cfg.eval.candidates == 0) throw ConfigError("--candidates must be >= 1");
  if (cfg.eval.budget && !(*cfg.eval.budget > 0.0 && *cfg.eval.budget < 1.0)) {
    throw ConfigError("--budget must lie in (0,1)");
  }
  const ScarParams& params = run.checkpoint.params;
  const ModelConfig& model = run.checkpoint.config;
  const Corpus& corpus = run.corpus;
  std::ostringstream summary;

  if (mode == EvalMode::probe) {
    const auto results = linear_probe(params, model, corpus.train, corpus.test, cfg.probe);
    std::ostringstream csv;
    csv << "fraction_percent,train_records,macro_auroc,skipped_classes\n";
    summary << "fraction  records  macro-AUROC\n";
    for (const auto& r : results) {
      const std::string csv_value = r.macro_auroc ? fixed(*r.macro_auroc * 100.0, 4) : "";
      const std::string text_value = r.macro_auroc ? fixed(*r.macro_auroc * 100.0, 2) : "n/a";
      csv << fixed(r.fraction * 100.0, 0) << ',' << r.train_records << ',' << csv_value << ',' << r.skipped_classes
          << '\n';
      summary << std::setw(7) << fixed(r.fraction * 100.0, 0) << "%  " << std::setw(7) << r.train_records << "  "
              << std::setw(11) << text_value << '\n';
    }
    write_text(run_dir / "probe.csv", csv.str());
    write_text(run_dir / "probe.txt", summary.str());
    return summary.str();
  }

  const ReferenceModel ref = run_reference(run_dir, cfg, corpus, cfg.reference_seeds.front());
  const EvalMasks masks = build_eval_masks(corpus.test, Geometry::of(corpus.config), ref, cfg.eval);
  const DecompositionTable table =
      decompose_by_missingness(params, model, corpus.config, corpus.test, ref, masks, cfg.eval);

  switch (mode) {
    case EvalMode::zeroshot: {
      const Tensor prompts = prompt_embeddings(params, model, corpus.config);
      const Tensor clean = zero_shot_scores(params, model, prompts, corpus.test);
      write_text(run_dir / "predictions.csv", masked_prediction_csv(corpus, table, clean));
      write_text(run_dir / "zeroshot.csv", zeroshot_csv(table));
      summary << "clean macro-AUROC " << fixed(table.clean_auroc * 100.0, 2) << "\n" << zeroshot_text(table);
      write_text(run_dir / "zeroshot.txt", summary.str());
      break;
    }
    case EvalMode::decompose: {
      write_text(run_dir / "decompose.csv", decomposition_csv(table));
      summary << decomposition_text(table);
      write_text(run_dir / "decompose.txt", summary.str());
      break;
    }
    case EvalMode::cmrs: {
      std::ostringstream csv;
      csv << "condition,CMRS,mean_S,mean_I,rows\n";
      for (const auto& c : table.conditions) {
        write_text(run_dir / ("ledger_" + slug(c.name) + ".csv"), ledger_csv(c.ledger));
        csv << c.name << ',' << opt_fixed(c.cmrs, 6) << ',' << fixed(c.mean_severity, 6) << ','
            << fixed(c.mean_impact, 6) << ',' << c.ledger.size() << '\n';
      }
      write_text(run_dir / "cmrs.csv", csv.str());
      std::vector<SensitivityRow> sens;
      for (auto seed : cfg.reference_seeds) {
        const ReferenceModel r = run_reference(run_dir, cfg, corpus, seed);
        const EvalMasks m = build_eval_masks(corpus.test, Geometry::of(corpus.config), r, cfg.eval);
        const DecompositionTable t = decompose_by_missingness(params, model, corpus.config, corpus.test, r, m, cfg.eval);
        sens.push_back({seed, r.clean_test_auroc, t.at("Joint-Rand.").cmrs, t.at("Joint-Hard").cmrs});
      }
      write_text(run_dir / "cmrs_sensitivity.csv", sensitivity_csv(sens));
      summary << "condition       CMRS\n";
      for (const auto& c : table.conditions) {
        summary << std::left << std::setw(14) << c.name << std::right << "  " << opt_fixed(c.cmrs ? std::optional(*c.cmrs * 100.0) : std::nullopt, 2) << '\n';
      }
      double lo_r = 1e9, hi_r = -1e9, lo_h = 1e9, hi_h = -1e9;
      for (const auto& s : sens) {
        if (s.cmrs_rand) lo_r = std::min(lo_r, *s.cmrs_rand), hi_r = std::max(hi_r, *s.cmrs_rand);
        if (s.cmrs_hard) lo_h = std::min(lo_h, *s.cmrs_hard), hi_h = std::max(hi_h, *s.cmrs_hard);
      }
      summary << "reference seeds " << sens.size() << ": Rand. CMRS spread " << fixed(std::max(0.0, hi_r - lo_r) * 100.0, 2)
              << ", Hard CMRS spread " << fixed(std::max(0.0, hi_h - lo_h) * 100.0, 2) << '\n';
      write_text(run_dir / "cmrs.txt", summary.str());
      break;
    }
    case EvalMode::probe:
      break;
  }
  return summary.str();
}

// ---- sweep ------------------------------------------------------------------------

std::string cmd_sweep(RunConfig cfg, const fs::path& out, bool verbose) {
  cfg.resolve();
  fs::create_directories(out);
  if (cfg.corpus_dir.empty()) {
    const fs::path dir = fs::absolute(out) / "corpus";
    export_corpus(generate_corpus(cfg.corpus), dir);
    cfg.corpus_dir = dir.string();
  }
  const Corpus corpus = load_run_corpus(cfg);
  const ReferenceModel ref = run_reference(out, cfg, corpus, cfg.reference_seeds.front());
  const EvalMasks masks = build_eval_masks(corpus.test, Geometry::of(corpus.config), ref, cfg.eval);

  struct Row {
    double lc, lm, clean, rand, hard, avg;
  };
  std::vector<Row> rows;
  for (double lc : cfg.sweep_lambda_cons) {
    for (double lm : cfg.sweep_lambda_mask) {
      RunConfig cell = cfg;
      cell.train.lambda_cons = lc;
      cell.train.lambda_mask = lm;
      const fs::path dir = out / ("lc" + fixed(lc, 2) + "_lm" + fixed(lm, 2));
      if (verbose) std::clog << "[scar] sweep cell lambda_cons=" << lc << " lambda_mask=" << lm << '\n';
      const TrainRun run = cmd_train(cell, dir, verbose);
      const DecompositionTable t = decompose_by_missingness(run.result.params, run.config.model, corpus.config,
                                                            corpus.test, ref, masks, cfg.eval);
      const double r = t.at("Joint-Rand.").auroc, h = t.at("Joint-Hard").auroc;
      rows.push_back({lc, lm, t.clean_auroc, r, h, (t.clean_auroc + r + h) / 3.0});
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].avg > rows[best].avg) best = i;
  }
  std::ostringstream csv, txt;
  csv << "lambda_cons,lambda_mask,Clean,Joint-Rand.,Joint-Hard,Average,best\n";
  txt << "lambda_cons  lambda_mask    Clean  Joint-Rand.  Joint-Hard  Average\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    csv << fixed(r.lc, 2) << ',' << fixed(r.lm, 2) << ',' << fixed(r.clean * 100, 4) << ',' << fixed(r.rand * 100, 4)
        << ',' << fixed(r.hard * 100, 4) << ',' << fixed(r.avg * 100, 4) << ',' << (i == best ? 1 : 0) << '\n';
    txt << std::setw(11) << fixed(r.lc, 2) << "  " << std::setw(11) << fixed(r.lm, 2) << "  " << std::setw(7)
        << fixed(r.clean * 100, 2) << "  " << std::setw(11) << fixed(r.rand * 100, 2) << "  " << std::setw(10)
        << fixed(r.hard * 100, 2) << "  " << std::setw(7) << fixed(r.avg * 100, 2) << (i == best ? "  *best" : "")
        << '\n';
  }
  save_run_config(cfg, out / "config.json");
  write_text(out / "sweep.csv", csv.str());
  write_text(out / "sweep.txt", txt.str());
  return txt.str();
}

// ---- plot -------------------------------------------------------------------------

std::vector<std::string> cmd_plot(const fs::path& run_dir, std::optional<std::uint64_t> seed) {
  LoadedRun run = load_run(run_dir);
  std::vector<std::string> written;
  const fs::path metrics = run_dir / "metrics.csv";
  if (fs::exists(metrics)) {
    const auto history = parse_metrics_csv(read_text(metrics));
    write_text(run_dir / "loss_curve.svg", loss_curve_svg(history));
    written.push_back("loss_curve.svg");
  }
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < run.corpus.test.size(); ++i) {
    if (!run.corpus.test[i].evidence.empty()) candidates.push_back(i);
  }
  Rng rng(derive_seed(seed.value_or(run.config.seed), 0x91f7));
  shuffle_range(candidates.begin(), candidates.end(), rng);
  const std::size_t count = std::min(run.config.plot_records, candidates.size());
  for (std::size_t k = 0; k < count; ++k) {
    const SignalRecord& r = run.corpus.test[candidates[k]];
    const auto panels = compensation_panels(run.checkpoint.params, run.checkpoint.config, r);
    const std::string name = "compensation_" + std::to_string(r.id) + ".svg";
    write_text(run_dir / name, compensation_svg(panels, r.id));
    written.push_back(name);
  }
  return written;
}

}  // namespace scar
