// dmmia — command line front end for the inversion laboratory.
//
// Subcommands cover the whole experiment lifecycle: data preparation, model
// training, generator pretraining, the attack itself, evaluation, the theory
// self-checks, hyper-parameter sweeps, and cross-run reporting.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dmmia/errors.hpp"
#include "dmmia/pipeline.hpp"

namespace {

dmmia::PipelineConfig load_cfg(const std::string& config_path, const std::string& out_dir) {
  dmmia::PipelineConfig cfg = dmmia::load_pipeline_config(config_path);
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dmmia — model inversion laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  int jobs = 0;
  bool force = false;
  bool allow_drift = false;
  long grid_cols = 8;
  std::vector<std::string> run_dirs;
  std::string report_out;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Path to the JSON config")->required();
    sub->add_option("--out", out_dir, "Override the config's out_dir");
  };

  add_common(app.add_subcommand("prepare-data", "Build and split the dataset"));
  add_common(app.add_subcommand("train-target", "Train the private target classifier"));
  add_common(app.add_subcommand("train-eval", "Train the held-out evaluation classifier"));
  add_common(app.add_subcommand("pretrain-generator", "Pretrain the image prior"));
  CLI::App* attack = app.add_subcommand("attack", "Invert every private class");
  add_common(attack);
  attack->add_option("--jobs", jobs, "Parallel class inversions (overrides config)");
  CLI::App* evaluate = app.add_subcommand("evaluate", "Score attack artifacts");
  add_common(evaluate);
  evaluate->add_flag("--force", force, "Skip config digest checks");
  add_common(app.add_subcommand("theory-check", "Run the analytical self-checks"));
  CLI::App* sweep = app.add_subcommand("sweep", "Grid-run attack variants");
  add_common(sweep);
  sweep->add_flag("--force", force, "Skip config digest checks");
  CLI::App* report = app.add_subcommand("report", "Merge runs into one report");
  report->add_option("--runs", run_dirs, "Run directories to merge")->required()->expected(-1);
  report->add_option("--out", report_out, "Report output directory")->required();
  report->add_flag("--allow-config-drift", allow_drift,
                   "Merge runs whose configs differ beyond the loss weights");
  report->add_option("--grid-cols", grid_cols, "Images per grid row");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const std::string sub = app.get_subcommands().front()->get_name();
  try {
    if (sub == "report") {
      dmmia::run_report(run_dirs, report_out, allow_drift, grid_cols);
      std::printf("report: merged %zu runs into %s\n", run_dirs.size(), report_out.c_str());
      return 0;
    }

    const dmmia::PipelineConfig cfg = load_cfg(config_path, out_dir);
    if (sub == "prepare-data") {
      dmmia::run_prepare_data(cfg);
      std::printf("prepare-data: wrote data/ under %s\n", cfg.out_dir.c_str());
    } else if (sub == "train-target") {
      const dmmia::TrainReport r = dmmia::run_train_target(cfg);
      std::printf("train-target: train_acc=%.2f holdout_acc=%.2f\n", r.train_acc, r.holdout_acc);
    } else if (sub == "train-eval") {
      const dmmia::TrainReport r = dmmia::run_train_eval(cfg);
      std::printf("train-eval: train_acc=%.2f holdout_acc=%.2f\n", r.train_acc, r.holdout_acc);
    } else if (sub == "pretrain-generator") {
      const dmmia::PretrainReport r = dmmia::run_pretrain_generator(cfg);
      std::printf("pretrain-generator: recon_mse=%.6f%s\n", r.recon_mse,
                  r.recon_warning ? " (warning: reconstruction above threshold)" : "");
    } else if (sub == "attack") {
      dmmia::run_attack_command(cfg, jobs);
      std::printf("attack: wrote attacks/ under %s\n", cfg.out_dir.c_str());
    } else if (sub == "evaluate") {
      const auto rows = dmmia::run_evaluate(cfg, force);
      std::printf("evaluate: wrote %zu rows to reports/report.csv\n", rows.size());
    } else if (sub == "theory-check") {
      dmmia::run_theory_check(cfg);
      std::printf("theory-check: all checks passed (theory/theory.csv)\n");
    } else if (sub == "sweep") {
      dmmia::run_sweep(cfg, force);
      std::printf("sweep: wrote sweep/sweep.csv under %s\n", cfg.out_dir.c_str());
    }
    return 0;
  } catch (const dmmia::ConfigError& e) {
    std::fprintf(stderr, "error(user): %s\n", e.what());
    return 1;
  } catch (const dmmia::ParseError& e) {
    std::fprintf(stderr, "error(user): %s\n", e.what());
    return 1;
  } catch (const dmmia::IoError& e) {
    std::fprintf(stderr, "error(user): %s\n", e.what());
    return 1;
  } catch (const dmmia::ContractError& e) {
    std::fprintf(stderr, "error(user): %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error(internal): %s\n", e.what());
    return 2;
  }
}
