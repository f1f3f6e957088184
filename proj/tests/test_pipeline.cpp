#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmmia/data.hpp"
#include "dmmia/errors.hpp"
#include "dmmia/linalg.hpp"
#include "dmmia/metrics.hpp"
#include "dmmia/models.hpp"
#include "dmmia/pipeline.hpp"

#ifdef __unix__
#include <sys/wait.h>
#endif

using namespace dmmia;
namespace fs = std::filesystem;

namespace {

const char* kSmokeJson = R"({
  "seed": 5,
  "data": {"source": "synthetic", "n_per_class": 12, "n_classes": 4,
           "public_classes": [2, 3], "private_classes": [0, 1]},
  "target": {"hidden": [32, 16], "epochs": 4, "lr": 0.005, "batch_size": 8,
             "holdout_fraction": 0.0},
  "evaluator": {"hidden": [24, 12], "epochs": 4, "lr": 0.005, "batch_size": 8,
                "holdout_fraction": 0.0},
  "generator": {"mode": "autoencoder", "z_dim": 8, "w_dim": 16, "hidden": 48,
                "epochs": 3, "lr": 0.002, "batch_size": 12},
  "attack": {"lambda1": 0.3, "lambda2": 0.7, "r": 0.7, "n_w": 12, "rho": 6,
             "pool": 30, "selected": 8, "steps": 3, "batch_size": 4, "lr": 0.005},
  "metrics": {"prdc_k": 3}
})";

// One tiny end-to-end environment shared by the pipeline tests: a full run
// with prototype losses enabled and a cross-entropy-only twin.
struct PipeLab {
  std::string base;
  PipelineConfig cfg;     // prototype attack, out_dir = base/run_dmmia
  PipelineConfig ce_cfg;  // lambda1 = lambda2 = 0, out_dir = base/run_ce
  std::vector<MetricsRow> rows;

  static void run_all(const PipelineConfig& c) {
    run_prepare_data(c);
    run_train_target(c);
    run_train_eval(c);
    run_pretrain_generator(c);
    run_attack_command(c);
  }

  PipeLab() {
    base = (fs::temp_directory_path() / "dmmia_pipe_lab").string();
    fs::remove_all(base);

    cfg = parse_pipeline_config(kSmokeJson);
    cfg.out_dir = base + "/run_dmmia";
    run_all(cfg);
    rows = run_evaluate(cfg);

    ce_cfg = cfg;
    ce_cfg.attack.lambda1 = 0.0;
    ce_cfg.attack.lambda2 = 0.0;
    ce_cfg.out_dir = base + "/run_ce";
    run_all(ce_cfg);
    run_evaluate(ce_cfg);
  }

  static const PipeLab& get() {
    static PipeLab lab;
    return lab;
  }
};

bool all_hex(const std::string& s) {
  for (char c : s)
    if (std::string("0123456789abcdef").find(c) == std::string::npos) return false;
  return true;
}

}  // namespace

TEST_CASE("config defaults follow the desk preset and presets resolve") {
  const PipelineConfig d = parse_pipeline_config("{}");
  CHECK(d.attack.n_w == 100);
  CHECK(d.attack.rho == 50);
  CHECK(d.attack.pool == 500);
  CHECK(d.attack.selected == 50);
  CHECK(d.attack.steps == 50);
  CHECK(d.attack.batch_size == 16);
  CHECK(d.attack.lambda1 == 0.3);
  CHECK(d.attack.lambda2 == 0.7);
  CHECK(d.attack.r == 0.7);
  CHECK(d.attack.lr == 0.005);
  CHECK(d.attack.normalize_features == true);
  CHECK(d.target.hidden == std::vector<Index>{256, 128});
  CHECK(d.evaluator.hidden == std::vector<Index>{256, 128});
  CHECK(d.data.public_classes == std::vector<int>{5, 6, 7, 8, 9});
  CHECK(d.data.private_classes == std::vector<int>{0, 1, 2, 3, 4});

  const PipelineConfig paper = parse_pipeline_config(R"({"preset": "paper"})");
  CHECK(paper.attack.n_w == 500);
  CHECK(paper.attack.rho == 250);
  CHECK(paper.attack.pool == 2000);
  CHECK(paper.attack.selected == 200);
  CHECK(paper.attack.batch_size == 16);
  CHECK(paper.attack.lr == 0.005);
  CHECK(paper.attack.normalize_features == false);

  // Explicit keys override the preset.
  const PipelineConfig mixed =
      parse_pipeline_config(R"({"preset": "paper", "attack": {"n_w": 300}})");
  CHECK(mixed.attack.n_w == 300);
  CHECK(mixed.attack.rho == 250);

  // `desk` is exactly the default.
  CHECK(resolved_config_json(parse_pipeline_config(R"({"preset": "desk"})")) ==
        resolved_config_json(d));
}

TEST_CASE("config rejects unknown keys with their full path") {
  CHECK_THROWS_WITH_AS(parse_pipeline_config(R"({"banana": 1})"),
                       doctest::Contains("banana"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_pipeline_config(R"({"attack": {"lamda1": 0.1}})"),
                       doctest::Contains("attack.lamda1"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_pipeline_config(R"({"data": {"sourc": "x"}})"),
                       doctest::Contains("data.sourc"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_pipeline_config(R"({"sweep": {"nw": []}})"),
                       doctest::Contains("sweep.nw"), ConfigError);
}

TEST_CASE("config validates types, ranges, and enumerations") {
  CHECK_THROWS_WITH_AS(parse_pipeline_config(R"({"seed": -1})"), doctest::Contains("seed"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_pipeline_config(R"({"seed": "x"})"), doctest::Contains("seed"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_pipeline_config(R"({"preset": "tiny"})"),
                       doctest::Contains("preset"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_pipeline_config(R"({"data": {"source": "magic"}})"),
                       doctest::Contains("data.source"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_pipeline_config(R"({"attack": {"lambda1": -0.5}})"),
                       doctest::Contains("attack.lambda1"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_pipeline_config(R"({"attack": {"rho": 0}})"),
                       doctest::Contains("attack.rho"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_pipeline_config(R"({"generator": {"mode": "vae"}})"),
                       doctest::Contains("generator.mode"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_pipeline_config(R"({"target": {"hidden": []}})"),
                       doctest::Contains("target.hidden"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_pipeline_config(R"({"data": {"public_classes": []}})"),
                       doctest::Contains("data.public_classes"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_pipeline_config(R"({"metrics": {"prdc_k": -1}})"),
                       doctest::Contains("metrics.prdc_k"), ConfigError);
  CHECK_THROWS_AS(parse_pipeline_config("3"), ConfigError);
  CHECK_THROWS_AS(parse_pipeline_config("{"), ConfigError);
}

TEST_CASE("resolved config is canonical and digests are stable") {
  const PipelineConfig cfg = parse_pipeline_config(kSmokeJson);
  const std::string digest = config_digest(cfg);
  CHECK(digest.size() == 16);
  CHECK(all_hex(digest));

  // Round trip through the resolved form is a fixed point.
  const std::string resolved = resolved_config_json(cfg);
  CHECK(resolved_config_json(parse_pipeline_config(resolved)) == resolved);
  CHECK(config_digest(parse_pipeline_config(resolved)) == digest);

  // Execution details stay out of the digest.
  PipelineConfig moved = cfg;
  moved.out_dir = "/somewhere/else";
  CHECK(config_digest(moved) == digest);
  PipelineConfig threaded = cfg;
  threaded.attack.jobs = 7;
  CHECK(config_digest(threaded) == digest);

  PipelineConfig changed = cfg;
  changed.attack.lambda2 = 0.0;
  CHECK(config_digest(changed) != digest);
}

TEST_CASE("scope digests isolate the sections that matter") {
  const PipelineConfig cfg = parse_pipeline_config(kSmokeJson);
  PipelineConfig changed = cfg;
  changed.attack.lambda2 = 0.0;

  CHECK(scope_digest(cfg, "data") == scope_digest(changed, "data"));
  CHECK(scope_digest(cfg, "target") == scope_digest(changed, "target"));
  CHECK(scope_digest(cfg, "evaluator") == scope_digest(changed, "evaluator"));
  CHECK(scope_digest(cfg, "generator") == scope_digest(changed, "generator"));
  CHECK(scope_digest(cfg, "attack") != scope_digest(changed, "attack"));

  PipelineConfig retrained = cfg;
  retrained.target.epochs = 9;
  CHECK(scope_digest(cfg, "target") != scope_digest(retrained, "target"));
  CHECK(scope_digest(cfg, "generator") == scope_digest(retrained, "generator"));

  CHECK_THROWS_AS(scope_digest(cfg, "nonsense"), ContractError);
}

TEST_CASE("attack method name follows the lambdas") {
  PipelineConfig cfg = parse_pipeline_config("{}");
  CHECK(attack_method_name(cfg) == "dmmia");
  cfg.attack.lambda1 = 0.0;
  CHECK(attack_method_name(cfg) == "dmmia");
  cfg.attack.lambda2 = 0.0;
  CHECK(attack_method_name(cfg) == "ce");
}

TEST_CASE("feature normalization is a first-class config key") {
  const PipelineConfig off =
      parse_pipeline_config(R"({"attack": {"normalize_features": false}})");
  CHECK(off.attack.normalize_features == false);
  CHECK(resolved_config_json(off).find("\"normalize_features\": false") != std::string::npos);

  const PipelineConfig on = parse_pipeline_config("{}");
  CHECK(config_digest(on) != config_digest(off));
  CHECK(scope_digest(on, "attack") != scope_digest(off, "attack"));
  CHECK(scope_digest(on, "generator") == scope_digest(off, "generator"));

  CHECK_THROWS_WITH_AS(parse_pipeline_config(R"({"attack": {"normalize_features": 1}})"),
                       doctest::Contains("attack.normalize_features"), ConfigError);
}

TEST_CASE("dataset checkpoints round trip bitwise") {
  const Dataset ds = synth_digits(6, 3, 9);
  const Checkpoint ck = dataset_to_checkpoint(ds);
  const Dataset back = dataset_from_checkpoint(Checkpoint::decode(ck.encode()));
  REQUIRE(back.pixels.rows() == ds.pixels.rows());
  CHECK((back.pixels.array() == ds.pixels.array()).all());
  CHECK(back.labels == ds.labels);
  CHECK(back.rows == ds.rows);
  CHECK(back.cols == ds.cols);

  Checkpoint wrong;
  wrong.metadata["kind"] = "classifier";
  CHECK_THROWS_AS(dataset_from_checkpoint(wrong), ParseError);
}

TEST_CASE("render_grid produces exact PGM bytes") {
  SUBCASE("single all-zero image") {
    const std::string pgm = render_grid(Mat::Zero(1, 784), 1);
    REQUIRE(pgm.size() == 13 + 784);
    CHECK(pgm.substr(0, 13) == "P5\n28 28\n255\n");
    for (std::size_t i = 13; i < pgm.size(); ++i)
      CHECK(static_cast<unsigned char>(pgm[i]) == 0);
  }

  SUBCASE("three images in two columns") {
    const std::string pgm = render_grid(Mat::Ones(3, 784), 2);
    REQUIRE(pgm.size() == 13 + 57 * 57);
    CHECK(pgm.substr(0, 13) == "P5\n57 57\n255\n");
    auto at = [&](Index r, Index c) {
      return static_cast<unsigned char>(pgm[13 + r * 57 + c]);
    };
    CHECK(at(0, 0) == 255);    // first tile
    CHECK(at(0, 28) == 255);   // vertical separator
    CHECK(at(28, 0) == 255);   // horizontal separator
    CHECK(at(29, 0) == 255);   // third image, second row of tiles
    CHECK(at(29, 29) == 0);    // empty fourth cell
    CHECK(at(56, 56) == 0);
  }

  SUBCASE("rounding and clamping") {
    Mat px(1, 4);
    px << 0.5, 2.0, -0.1, 64.0 / 255.0;
    const std::string pgm = render_grid(px, 1);
    REQUIRE(pgm.size() == 11 + 4);
    CHECK(pgm.substr(0, 11) == "P5\n2 2\n255\n");
    CHECK(static_cast<unsigned char>(pgm[11]) == 128);
    CHECK(static_cast<unsigned char>(pgm[12]) == 255);
    CHECK(static_cast<unsigned char>(pgm[13]) == 0);
    CHECK(static_cast<unsigned char>(pgm[14]) == 64);
  }

  SUBCASE("validation") {
    CHECK_THROWS_AS(render_grid(Mat(), 1), ContractError);
    CHECK_THROWS_AS(render_grid(Mat::Zero(1, 784), 0), ContractError);
    CHECK_THROWS_AS(render_grid(Mat::Zero(1, 12), 1), ContractError);  // not square
  }
}

TEST_CASE("atomic file helpers round trip and digest") {
  const std::string dir = (fs::temp_directory_path() / "dmmia_pipe_io").string();
  fs::remove_all(dir);
  const std::string path = dir + "/nested/a.bin";
  const std::string payload = std::string("abc\0def", 7);
  atomic_write(path, payload);
  CHECK(read_file(path) == payload);

  char expect[32];
  std::snprintf(expect, sizeof expect, "fnv:%016llx",
                static_cast<unsigned long long>(fnv1a(payload.data(), payload.size())));
  CHECK(file_digest(path) == expect);

  CHECK_THROWS_AS(read_file(dir + "/missing.bin"), IoError);
  CHECK_THROWS_AS(file_digest(dir + "/missing.bin"), IoError);
  // No temp litter left behind.
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) ++files;
  CHECK(files == 1);
}

TEST_CASE("pipeline smoke run writes every artifact") {
  const PipeLab& lab = PipeLab::get();
  const std::string& dir = lab.cfg.out_dir;

  for (const char* rel :
       {"config.resolved.json", "data/public.ck", "data/private.ck", "models/target.ck",
        "models/evaluator.ck", "models/generator.ck", "attacks/class0.ck", "attacks/class1.ck",
        "reports/report.csv", "manifests/prepare-data.json", "manifests/train-target.json",
        "manifests/train-eval.json", "manifests/pretrain-generator.json", "manifests/attack.json",
        "manifests/evaluate.json"}) {
    CAPTURE(rel);
    CHECK(fs::exists(dir + "/" + rel));
  }

  // The resolved config on disk is the canonical serialization.
  CHECK(read_file(dir + "/config.resolved.json") == resolved_config_json(lab.cfg));

  // Split datasets: 12 per class, two classes on each side.
  const Dataset pub = dataset_from_checkpoint(Checkpoint::load(dir + "/data/public.ck"));
  const Dataset priv = dataset_from_checkpoint(Checkpoint::load(dir + "/data/private.ck"));
  CHECK(pub.n() == 24);
  CHECK(priv.n() == 24);
  CHECK(priv.label_max() == 1);
  CHECK(pub.label_max() == 3);

  // Evaluation rows: one per private class, prototype method.
  REQUIRE(lab.rows.size() == 2);
  for (std::size_t i = 0; i < lab.rows.size(); ++i) {
    const MetricsRow& r = lab.rows[i];
    CHECK(r.target_class == static_cast<int>(i));
    CHECK(r.method == "dmmia");
    CHECK(r.acc1 >= 0.0);
    CHECK(r.acc1 <= 100.0);
    CHECK(std::isfinite(r.fid));
    CHECK(r.div == (r.precision + r.recall + r.density + r.coverage) / 4.0);
  }

  // The CSV on disk parses back to the same rows and carries the digest.
  std::vector<std::string> comments;
  const std::vector<MetricsRow> parsed = parse_csv(read_file(dir + "/reports/report.csv"), &comments);
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[0].acc1 == lab.rows[0].acc1);
  CHECK(parsed[1].div == lab.rows[1].div);
  bool digest_comment = false;
  for (const std::string& c : comments)
    if (c == "config_digest=" + config_digest(lab.cfg)) digest_comment = true;
  CHECK(digest_comment);

  // Attack artifacts carry their provenance and the frozen-prior checksum.
  const Checkpoint atk = Checkpoint::load(dir + "/attacks/class1.ck");
  CHECK(atk.meta("kind") == "attack_result");
  CHECK(atk.meta("method") == "dmmia");
  CHECK(atk.meta("target_class") == "1");
  CHECK(atk.meta("config_digest") == config_digest(lab.cfg));
  CHECK(atk.meta("scope_digest") == scope_digest(lab.cfg, "attack"));
  CHECK(atk.get("images").rows() == 8);
  CHECK(atk.get("images").cols() == 784);
  CHECK(atk.get("z").rows() == 8);
  CHECK(atk.get("trajectory").rows() == 3 * 2);  // steps x batches
  CHECK(atk.get("trajectory").cols() == 4);

  const Generator gen = Generator::from_checkpoint(Checkpoint::load(dir + "/models/generator.ck"));
  char hex[32];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(gen.synthesis_checksum()));
  CHECK(atk.meta("synthesis_checksum") == hex);

  // Manifests are structured JSON with digests of inputs and outputs.
  const nlohmann::json man = nlohmann::json::parse(read_file(dir + "/manifests/attack.json"));
  CHECK(man.at("command") == "attack");
  CHECK(man.at("config_digest") == config_digest(lab.cfg));
  CHECK(man.at("seed") == 5);
  CHECK(man.at("wall_seconds").get<double>() >= 0.0);
  CHECK(man.at("inputs").contains("models/target.ck"));
  CHECK(man.at("inputs").contains("models/generator.ck"));
  CHECK(man.at("outputs").contains("attacks/class0.ck"));
  CHECK(man.at("inputs").at("models/target.ck") == file_digest(dir + "/models/target.ck"));
}

TEST_CASE("evaluate refuses stale digests unless forced") {
  const PipeLab& lab = PipeLab::get();
  const std::string report_path = lab.cfg.out_dir + "/reports/report.csv";
  const std::string original = read_file(report_path);

  PipelineConfig drifted = lab.cfg;
  drifted.attack.lambda2 = 0.25;
  CHECK_THROWS_WITH_AS(run_evaluate(drifted), doctest::Contains("digest"), ConfigError);
  // Refusal happens before any write.
  CHECK(read_file(report_path) == original);

  const std::vector<MetricsRow> forced = run_evaluate(drifted, /*force=*/true);
  CHECK(forced.size() == 2);

  // Restore the canonical report and confirm determinism.
  run_evaluate(lab.cfg);
  CHECK(read_file(report_path) == original);
}

TEST_CASE("subcommands name their missing inputs") {
  PipelineConfig empty = parse_pipeline_config(kSmokeJson);
  empty.out_dir = (fs::temp_directory_path() / "dmmia_pipe_empty").string();
  fs::remove_all(empty.out_dir);

  CHECK_THROWS_WITH_AS(run_train_target(empty), doctest::Contains("data/private.ck"), IoError);
  CHECK_THROWS_WITH_AS(run_pretrain_generator(empty), doctest::Contains("data/public.ck"),
                       IoError);
  CHECK_THROWS_WITH_AS(run_attack_command(empty), doctest::Contains("models/target.ck"), IoError);
  CHECK_THROWS_WITH_AS(run_evaluate(empty), doctest::Contains("models/evaluator.ck"), IoError);
  CHECK_THROWS_WITH_AS(run_sweep(empty), doctest::Contains("models/target.ck"), IoError);
}

TEST_CASE("pipeline rerun into a fresh directory is byte identical") {
  const PipeLab& lab = PipeLab::get();
  PipelineConfig twin = lab.cfg;
  twin.out_dir = lab.base + "/run_dmmia_twin";
  fs::remove_all(twin.out_dir);
  PipeLab::run_all(twin);
  run_evaluate(twin);

  for (const char* rel : {"config.resolved.json", "data/public.ck", "data/private.ck",
                          "models/target.ck", "models/evaluator.ck", "models/generator.ck",
                          "attacks/class0.ck", "attacks/class1.ck", "reports/report.csv"}) {
    CAPTURE(rel);
    CHECK(read_file(lab.cfg.out_dir + "/" + rel) == read_file(twin.out_dir + "/" + rel));
  }
}

TEST_CASE("parallel attack jobs produce identical artifacts") {
  const PipeLab& lab = PipeLab::get();
  const std::string c0 = read_file(lab.cfg.out_dir + "/attacks/class0.ck");
  const std::string c1 = read_file(lab.cfg.out_dir + "/attacks/class1.ck");

  run_attack_command(lab.cfg, /*jobs_override=*/2);
  CHECK(read_file(lab.cfg.out_dir + "/attacks/class0.ck") == c0);
  CHECK(read_file(lab.cfg.out_dir + "/attacks/class1.ck") == c1);
}

TEST_CASE("theory check emits a passing csv") {
  PipelineConfig cfg = parse_pipeline_config(R"({"seed": 3})");
  cfg.out_dir = (fs::temp_directory_path() / "dmmia_pipe_theory").string();
  fs::remove_all(cfg.out_dir);

  CHECK_NOTHROW(run_theory_check(cfg));
  const std::string csv = read_file(cfg.out_dir + "/theory/theory.csv");

  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    const std::size_t nl = csv.find('\n', pos);
    lines.push_back(csv.substr(pos, nl - pos));
    if (nl == std::string::npos) break;
    pos = nl + 1;
  }
  if (!lines.empty() && lines.back().empty()) lines.pop_back();

  REQUIRE(lines.size() == 66);  // header + 2 trace + 20 pullback + 40 kl + 3 simplex
  CHECK(lines[0] == "check,lhs,rhs,gap,pass");
  bool uniform = false, mc = false, pullback = false, ratio = false, simplex = false;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    CAPTURE(lines[i]);
    CHECK(lines[i].substr(lines[i].size() - 2) == ",1");
    if (lines[i].rfind("trace_uniform10,", 0) == 0) uniform = true;
    if (lines[i].rfind("trace_mc,", 0) == 0) mc = true;
    if (lines[i].rfind("pullback_probe_19,", 0) == 0) pullback = true;
    if (lines[i].rfind("kl_ratio_", 0) == 0) ratio = true;
    if (lines[i].rfind("simplex_k10,", 0) == 0) simplex = true;
  }
  CHECK(uniform);
  CHECK(mc);
  CHECK(pullback);
  CHECK(ratio);
  CHECK(simplex);
  CHECK(fs::exists(cfg.out_dir + "/manifests/theory-check.json"));
}

TEST_CASE("sweep emits one aggregate row per cell") {
  const PipeLab& lab = PipeLab::get();
  PipelineConfig cfg = lab.cfg;
  cfg.sweep.lambda2 = {0.0, 0.7};
  run_sweep(cfg);

  std::vector<std::string> comments;
  const std::vector<MetricsRow> rows =
      parse_csv(read_file(cfg.out_dir + "/sweep/sweep.csv"), &comments);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].target_class == -1);
  CHECK(rows[1].target_class == -1);
  CHECK(rows[0].method == "dmmia;l1=0.3;l2=0;nw=12;rho=6;r=0.7");
  CHECK(rows[1].method == "dmmia;l1=0.3;l2=0.7;nw=12;rho=6;r=0.7");
  CHECK(std::isfinite(rows[0].div));
  CHECK(std::isfinite(rows[1].div));

  // Each cell keeps its own per-class report; models are not retrained.
  for (int cell : {0, 1}) {
    const std::string cd = cfg.out_dir + "/sweep/cell" + std::to_string(cell);
    const std::vector<MetricsRow> cell_rows = parse_csv(read_file(cd + "/reports/report.csv"));
    CHECK(cell_rows.size() == 2);
    CHECK(fs::exists(cd + "/attacks/class0.ck"));
    CHECK(!fs::exists(cd + "/models"));
  }

  // The aggregate row is the mean of the per-class rows.
  const std::vector<MetricsRow> cell0 =
      parse_csv(read_file(cfg.out_dir + "/sweep/cell0/reports/report.csv"));
  CHECK(rows[0].acc1 == (cell0[0].acc1 + cell0[1].acc1) / 2.0);
  CHECK(rows[0].fid == (cell0[0].fid + cell0[1].fid) / 2.0);
}

TEST_CASE("report merges runs and renders grids") {
  const PipeLab& lab = PipeLab::get();
  const std::string out = lab.base + "/report_out";
  fs::remove_all(out);
  run_report({lab.cfg.out_dir, lab.ce_cfg.out_dir}, out);

  const std::vector<MetricsRow> merged = parse_csv(read_file(out + "/merged.csv"));
  REQUIRE(merged.size() == 4);
  int n_dmmia = 0, n_ce = 0;
  for (const MetricsRow& r : merged) {
    if (r.method == "dmmia") ++n_dmmia;
    if (r.method == "ce") ++n_ce;
  }
  CHECK(n_dmmia == 2);
  CHECK(n_ce == 2);

  for (const char* rel : {"grids/dmmia_class0.pgm", "grids/dmmia_class1.pgm",
                          "grids/ce_class0.pgm", "grids/ce_class1.pgm"}) {
    CAPTURE(rel);
    REQUIRE(fs::exists(out + "/" + rel));
    CHECK(read_file(out + "/" + rel).substr(0, 3) == "P5\n");
  }

  const std::string summary = read_file(out + "/summary.txt");
  CHECK(summary.find("dmmia") != std::string::npos);
  CHECK(summary.find("ce") != std::string::npos);
  CHECK(summary.find("acc1") != std::string::npos);
  CHECK(fs::exists(out + "/manifests/report.json"));
}

TEST_CASE("report rejects config drift outside the lambdas") {
  const PipeLab& lab = PipeLab::get();
  const std::string drift_dir = lab.base + "/run_drift";
  fs::remove_all(drift_dir);
  fs::create_directories(drift_dir);
  fs::copy(lab.ce_cfg.out_dir, drift_dir, fs::copy_options::recursive);

  PipelineConfig drifted = lab.ce_cfg;
  drifted.target.epochs = 5;
  atomic_write(drift_dir + "/config.resolved.json", resolved_config_json(drifted));

  const std::string out = lab.base + "/report_drift_out";
  fs::remove_all(out);
  CHECK_THROWS_AS(run_report({lab.cfg.out_dir, drift_dir}, out), ConfigError);
  CHECK_NOTHROW(run_report({lab.cfg.out_dir, drift_dir}, out, /*allow_config_drift=*/true));
  CHECK(fs::exists(out + "/merged.csv"));
}

TEST_CASE("cli binary maps errors to exit codes") {
#ifdef __unix__
  const char* env = std::getenv("DMMIA_BIN");
  std::string bin = env ? env : "";
  if (bin.empty()) {
    for (const char* cand : {"../tools/dmmia", "build/tools/dmmia", "tools/dmmia"})
      if (fs::exists(cand)) bin = cand;
  }
  if (bin.empty()) {
    MESSAGE("dmmia binary not found; set DMMIA_BIN");
    return;
  }

  const std::string dir = (fs::temp_directory_path() / "dmmia_pipe_cli").string();
  fs::remove_all(dir);
  fs::create_directories(dir);
  atomic_write(dir + "/cfg.json",
               std::string(R"({"seed": 3, "out_dir": ")") + dir + R"(/run"})");

  auto run = [&](const std::string& args) {
    const int rc = std::system((bin + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  };

  CHECK(run("theory-check --config " + dir + "/cfg.json") == 0);
  CHECK(fs::exists(dir + "/run/theory/theory.csv"));
  CHECK(run("theory-check --config " + dir + "/does_not_exist.json") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("") == 1);
  CHECK(run("evaluate --config " + dir + "/cfg.json") == 1);  // missing upstream artifacts
#else
  MESSAGE("exit-code test runs on unix only");
#endif
}
