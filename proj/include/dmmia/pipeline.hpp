#ifndef DMMIA_PIPELINE_HPP
#define DMMIA_PIPELINE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "dmmia/attack.hpp"
#include "dmmia/checkpoint.hpp"
#include "dmmia/data.hpp"
#include "dmmia/metrics.hpp"
#include "dmmia/models.hpp"
#include "dmmia/tensor.hpp"

namespace dmmia {

// Orchestration layer behind the command-line tool. Every subcommand reads
// and writes artifacts under PipelineConfig::out_dir, embeds the resolved
// config digest in each artifact, and records a manifest.
//
// Derived random streams (stable API, pinned by tests):
//   mix_seed(seed, 10)      synthetic data generation
//   mix_seed(seed, 20)      target-classifier training
//   mix_seed(seed, 21)      evaluator training
//   mix_seed(seed, 22)      generator pretraining
//   mix_seed(seed, 30 + c)  inversion run against private class c
//   mix_seed(seed, 40)      theory-check Monte-Carlo draws
//   mix_seed(seed, 41)      theory-check probe classifier
//   mix_seed(seed, 42)      theory-check probe inputs

struct DataSection {
  std::string source = "synthetic";  // "synthetic" | "idx"
  std::string idx_images;            // idx source only
  std::string idx_labels;
  Index n_per_class = 64;            // synthetic source only
  int n_classes = 10;
  std::vector<int> public_classes = {5, 6, 7, 8, 9};
  std::vector<int> private_classes = {0, 1, 2, 3, 4};
};

struct ModelSection {
  std::vector<Index> hidden = {256, 128};
  int epochs = 12;
  double lr = 0.005;
  Index batch_size = 64;
  double holdout_fraction = 0.1;
};

struct GeneratorSection {
  std::string mode = "autoencoder";
  Index z_dim = 16;
  Index w_dim = 32;
  Index hidden = 128;
  int epochs = 12;
  double lr = 0.002;
  Index batch_size = 50;
  double recon_warn_threshold = 0.05;
};

// Defaults are the `desk` preset; `preset: "paper"` switches to the
// full-strength values (N_w 500, rho 250, pool 2000, selected 200).
struct AttackSection {
  double lambda1 = 0.3;
  double lambda2 = 0.7;
  double r = 0.7;
  Index n_w = 100;
  Index rho = 50;
  Index pool = 500;
  Index selected = 50;
  int steps = 50;
  Index batch_size = 16;
  double lr = 0.005;
  double beta1 = 0.1;
  double beta2 = 0.1;
  bool shift_ensemble = false;
  // Desk-scale feature extractors are shallow enough that raw prototype dot
  // products either blow up (the memory norms race the feature norms) or
  // freeze; unit-normalized features keep both prototype losses bounded, so
  // the desk preset turns the flag on. The paper preset turns it back off.
  bool normalize_features = true;
  int jobs = 1;
};

// Empty lists fall back to the base attack value, giving a 1-cell sweep.
struct SweepSection {
  std::vector<double> lambda1, lambda2, r;
  std::vector<Index> n_w, rho;
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "runs/out";
  DataSection data;
  ModelSection target;
  ModelSection evaluator;
  GeneratorSection generator;
  AttackSection attack;
  Index prdc_k = 0;  // 0 = automatic
  SweepSection sweep;
};

// --- configuration -----------------------------------------------------------

// Parses a JSON config. Unknown keys anywhere are rejected with their full
// path; `preset` ("paper" | "desk") is applied before explicit attack keys.
PipelineConfig parse_pipeline_config(const std::string& json_text);
PipelineConfig load_pipeline_config(const std::string& path);

// Canonical resolved form (sorted keys, all values explicit, no preset key):
// two configs that resolve to the same values serialize identically.
std::string resolved_config_json(const PipelineConfig& cfg);

// 16-hex-digit FNV-1a digest of the resolved form.
std::string config_digest(const PipelineConfig& cfg);

// Digest of the config subset that determines one artifact family. Scopes:
// "data", "target", "evaluator", "generator", "attack"; each includes the
// seed, the data section, and its own upstream sections.
std::string scope_digest(const PipelineConfig& cfg, const std::string& scope);

// "ce" when lambda1 == lambda2 == 0, otherwise "dmmia".
std::string attack_method_name(const PipelineConfig& cfg);

// --- filesystem helpers -------------------------------------------------------

std::string read_file(const std::string& path);  // IoError on failure
// Creates parent directories, writes to a temp name, then renames into place.
void atomic_write(const std::string& path, const std::string& bytes);
std::string file_digest(const std::string& path);  // "fnv:" + 16 hex digits

// --- dataset container --------------------------------------------------------

Checkpoint dataset_to_checkpoint(const Dataset& ds);
Dataset dataset_from_checkpoint(const Checkpoint& ck);

// --- image grids ---------------------------------------------------------------

// Binary PGM (P5, maxval 255). Square images tiled row-major into `cols`
// columns with one-pixel white separators; unused cells stay black; each
// pixel is round(255 * value) clamped to [0, 255].
std::string render_grid(const Mat& images, Index cols);

// --- subcommands ---------------------------------------------------------------

void run_prepare_data(const PipelineConfig& cfg);
TrainReport run_train_target(const PipelineConfig& cfg);
TrainReport run_train_eval(const PipelineConfig& cfg);
PretrainReport run_pretrain_generator(const PipelineConfig& cfg);
// One inversion per private class; jobs_override > 0 supersedes attack.jobs.
void run_attack_command(const PipelineConfig& cfg, int jobs_override = 0);
// Writes reports/report.csv; digest mismatches raise ConfigError unless force.
std::vector<MetricsRow> run_evaluate(const PipelineConfig& cfg, bool force = false);
// Writes theory/theory.csv, then raises NumericalError if any check failed.
void run_theory_check(const PipelineConfig& cfg);
// Cross-product over the sweep lists; one aggregate row per cell in
// sweep/sweep.csv (target_class -1, method encodes the cell parameters).
void run_sweep(const PipelineConfig& cfg, bool force = false);
// Merges run reports into out_dir and renders one PGM grid per attack
// artifact. With several runs their resolved configs must agree outside
// attack.lambda1/lambda2 unless allow_config_drift.
void run_report(const std::vector<std::string>& run_dirs, const std::string& out_dir,
                bool allow_config_drift = false, Index grid_cols = 8);

}  // namespace dmmia

#endif
