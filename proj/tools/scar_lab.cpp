// scar_lab: corpus generation, training, evaluation, sweeps and plots.
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "scar/graph.hpp"
#include "scar/lab.hpp"
#include "scar/missingness.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitDependency = 3;
constexpr int kExitNumeric = 4;

scar::RunConfig base_config(const std::string& path) {
  return path.empty() ? scar::RunConfig{} : scar::load_run_config(path);
}

int run(int argc, char** argv) {
  CLI::App app{"scar_lab: adversarially masked signal-text alignment lab"};
  app.require_subcommand(1);

  std::string config_path, out, variant, mode;
  std::optional<std::uint64_t> seed;
  std::optional<double> budget;
  std::optional<std::size_t> candidates;

  auto* gen = app.add_subcommand("gen", "generate the synthetic corpus");
  gen->add_option("--config", config_path, "run config JSON");
  gen->add_option("--out", out, "corpus directory")->required();
  gen->add_option("--seed", seed, "corpus seed");

  auto* train = app.add_subcommand("train", "train one variant into a run directory");
  train->add_option("--config", config_path, "run config JSON");
  train->add_option("--out", out, "run directory")->required();
  train->add_option("--variant", variant, "variant name (default: Full Model)");
  train->add_option("--seed", seed, "training seed");

  auto* eval = app.add_subcommand("eval", "evaluate a trained run directory");
  eval->add_option("--out", out, "run directory")->required();
  eval->add_option("--mode", mode, "zeroshot | probe | cmrs | decompose")->required();
  eval->add_option("--seed", seed, "evaluation mask seed");
  eval->add_option("--budget", budget, "fixed masked-sample fraction for the base masks");
  eval->add_option("--candidates", candidates, "candidate masks per record for Hard selection");

  auto* sweep = app.add_subcommand("sweep", "grid over the consistency and budget weights");
  sweep->add_option("--config", config_path, "run config JSON");
  sweep->add_option("--out", out, "sweep directory")->required();
  sweep->add_option("--variant", variant, "variant name (default: Full Model)");
  sweep->add_option("--seed", seed, "training seed");

  auto* plot = app.add_subcommand("plot", "emit SVG figures for a run directory");
  plot->add_option("--out", out, "run directory")->required();
  plot->add_option("--seed", seed, "record sampling seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  if (gen->parsed()) {
    scar::RunConfig cfg = base_config(config_path);
    if (seed) cfg.corpus.seed = *seed;
    const auto r = scar::cmd_gen(cfg, out);
    std::cout << "wrote " << r.records << " records to " << out << " (manifest " << r.manifest_hash << ")\n";
  } else if (train->parsed()) {
    scar::RunConfig cfg = base_config(config_path);
    if (!variant.empty()) cfg.variant = variant;
    if (seed) cfg.seed = *seed;
    const auto run = scar::cmd_train(cfg, out);
    const auto& last = run.result.history.back();
    std::cout << "trained '" << run.config.variant << "' for " << run.result.steps << " steps; final L_align "
              << last.align << ", mean gate " << last.mean_gate;
    if (last.val_auroc) std::cout << ", val macro-AUROC " << *last.val_auroc;
    std::cout << "\nrun directory: " << out << '\n';
  } else if (eval->parsed()) {
    const auto m = scar::eval_mode_from_name(mode);
    std::cout << scar::cmd_eval(out, m, {seed, budget, candidates});
  } else if (sweep->parsed()) {
    scar::RunConfig cfg = base_config(config_path);
    if (!variant.empty()) cfg.variant = variant;
    if (seed) cfg.seed = *seed;
    std::cout << scar::cmd_sweep(cfg, out);
  } else if (plot->parsed()) {
    for (const auto& name : scar::cmd_plot(out, seed)) std::cout << (fs::path(out) / name).string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const scar::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const scar::FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const scar::DependencyError& e) {
    std::cerr << "missing dependency: " << e.what() << '\n';
    return kExitDependency;
  } catch (const scar::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
