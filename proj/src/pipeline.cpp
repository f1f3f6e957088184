#include "dmmia/pipeline.hpp"

#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#ifdef _WIN32
#include <process.h>
#else
#include <unistd.h>
#endif

#include "dmmia/errors.hpp"
#include "dmmia/linalg.hpp"
#include "dmmia/rng.hpp"
#include "dmmia/theory.hpp"

namespace dmmia {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// --- small formatting helpers -------------------------------------------------

std::string hex16(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string shortest_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double now_seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --- config parsing -----------------------------------------------------------

[[noreturn]] void fail_key(const std::string& path, const std::string& why) {
  throw ConfigError("config: key '" + path + "' " + why);
}

void check_keys(const json& obj, const std::string& prefix,
                std::initializer_list<const char*> allowed) {
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const char* k : allowed)
      if (item.key() == k) ok = true;
    if (!ok) throw ConfigError("config: unknown key '" + prefix + item.key() + "'");
  }
}

const json* find(const json& obj, const char* key) {
  const auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

double as_double(const json& j, const std::string& path) {
  if (!j.is_number()) fail_key(path, "must be a number");
  return j.get<double>();
}

long long as_integer(const json& j, const std::string& path) {
  if (!j.is_number_integer()) fail_key(path, "must be an integer");
  return j.get<long long>();
}

std::uint64_t as_u64(const json& j, const std::string& path) {
  if (!j.is_number_unsigned()) fail_key(path, "must be a non-negative integer");
  return j.get<std::uint64_t>();
}

bool as_bool(const json& j, const std::string& path) {
  if (!j.is_boolean()) fail_key(path, "must be a boolean");
  return j.get<bool>();
}

std::string as_string(const json& j, const std::string& path) {
  if (!j.is_string()) fail_key(path, "must be a string");
  return j.get<std::string>();
}

std::vector<int> as_int_list(const json& j, const std::string& path) {
  if (!j.is_array()) fail_key(path, "must be an array of integers");
  std::vector<int> out;
  for (const json& e : j) out.push_back(static_cast<int>(as_integer(e, path)));
  return out;
}

std::vector<Index> as_index_list(const json& j, const std::string& path) {
  if (!j.is_array()) fail_key(path, "must be an array of integers");
  std::vector<Index> out;
  for (const json& e : j) out.push_back(static_cast<Index>(as_integer(e, path)));
  return out;
}

std::vector<double> as_double_list(const json& j, const std::string& path) {
  if (!j.is_array()) fail_key(path, "must be an array of numbers");
  std::vector<double> out;
  for (const json& e : j) out.push_back(as_double(e, path));
  return out;
}

void parse_model_section(const json& o, const std::string& prefix, ModelSection& s) {
  check_keys(o, prefix, {"hidden", "epochs", "lr", "batch_size", "holdout_fraction"});
  if (const json* v = find(o, "hidden")) s.hidden = as_index_list(*v, prefix + "hidden");
  if (const json* v = find(o, "epochs")) s.epochs = static_cast<int>(as_integer(*v, prefix + "epochs"));
  if (const json* v = find(o, "lr")) s.lr = as_double(*v, prefix + "lr");
  if (const json* v = find(o, "batch_size"))
    s.batch_size = static_cast<Index>(as_integer(*v, prefix + "batch_size"));
  if (const json* v = find(o, "holdout_fraction"))
    s.holdout_fraction = as_double(*v, prefix + "holdout_fraction");
}

void validate_model_section(const std::string& prefix, const ModelSection& s) {
  if (s.hidden.empty()) fail_key(prefix + "hidden", "must list at least one layer width");
  for (Index w : s.hidden)
    if (w < 1) fail_key(prefix + "hidden", "widths must be >= 1");
  if (s.epochs < 1) fail_key(prefix + "epochs", "must be >= 1");
  if (!(s.lr > 0.0)) fail_key(prefix + "lr", "must be > 0");
  if (s.batch_size < 1) fail_key(prefix + "batch_size", "must be >= 1");
  if (s.holdout_fraction < 0.0 || s.holdout_fraction >= 1.0)
    fail_key(prefix + "holdout_fraction", "must lie in [0, 1)");
}

void apply_paper_preset(AttackSection& a) {
  a.n_w = 500;
  a.rho = 250;
  a.pool = 2000;
  a.selected = 200;
  a.steps = 50;
  a.batch_size = 16;
  a.lr = 0.005;
  a.lambda1 = 0.3;
  a.lambda2 = 0.7;
  a.r = 0.7;
  // Full-strength feature extractors keep raw dot products well behaved; the
  // desk-scale default normalizes instead (see AttackSection).
  a.normalize_features = false;
}

void validate_config(const PipelineConfig& cfg) {
  const DataSection& d = cfg.data;
  if (d.source != "synthetic" && d.source != "idx")
    fail_key("data.source", "must be 'synthetic' or 'idx'");
  if (d.source == "idx" && (d.idx_images.empty() || d.idx_labels.empty()))
    fail_key("data.idx_images", "and data.idx_labels are required for the idx source");
  if (d.n_per_class < 1) fail_key("data.n_per_class", "must be >= 1");
  if (d.n_classes < 2) fail_key("data.n_classes", "must be >= 2");
  if (d.public_classes.empty()) fail_key("data.public_classes", "must not be empty");
  if (d.private_classes.empty()) fail_key("data.private_classes", "must not be empty");

  validate_model_section("target.", cfg.target);
  validate_model_section("evaluator.", cfg.evaluator);

  const GeneratorSection& g = cfg.generator;
  if (g.mode != "autoencoder" && g.mode != "gan")
    fail_key("generator.mode", "must be 'autoencoder' or 'gan'");
  if (g.z_dim < 1) fail_key("generator.z_dim", "must be >= 1");
  if (g.w_dim < 1) fail_key("generator.w_dim", "must be >= 1");
  if (g.hidden < 1) fail_key("generator.hidden", "must be >= 1");
  if (g.epochs < 1) fail_key("generator.epochs", "must be >= 1");
  if (!(g.lr > 0.0)) fail_key("generator.lr", "must be > 0");
  if (g.batch_size < 1) fail_key("generator.batch_size", "must be >= 1");
  if (g.recon_warn_threshold < 0.0) fail_key("generator.recon_warn_threshold", "must be >= 0");

  const AttackSection& a = cfg.attack;
  if (a.lambda1 < 0.0) fail_key("attack.lambda1", "must be >= 0");
  if (a.lambda2 < 0.0) fail_key("attack.lambda2", "must be >= 0");
  if (a.r < 0.0 || a.r > 1.0) fail_key("attack.r", "must lie in [0, 1]");
  if (a.n_w < 2) fail_key("attack.n_w", "must be >= 2");
  if (a.rho < 1) fail_key("attack.rho", "must be >= 1");
  if (a.rho >= a.n_w) fail_key("attack.rho", "must stay below attack.n_w");
  if (a.pool < 1) fail_key("attack.pool", "must be >= 1");
  if (a.selected < 1 || a.selected > a.pool)
    fail_key("attack.selected", "must satisfy 1 <= selected <= pool");
  if (a.steps < 1) fail_key("attack.steps", "must be >= 1");
  if (a.batch_size < 1) fail_key("attack.batch_size", "must be >= 1");
  if (!(a.lr > 0.0)) fail_key("attack.lr", "must be > 0");
  if (a.beta1 < 0.0 || a.beta1 >= 1.0) fail_key("attack.beta1", "must lie in [0, 1)");
  if (a.beta2 < 0.0 || a.beta2 >= 1.0) fail_key("attack.beta2", "must lie in [0, 1)");
  if (a.jobs < 1) fail_key("attack.jobs", "must be >= 1");

  if (cfg.prdc_k < 0) fail_key("metrics.prdc_k", "must be >= 0");

  for (double v : cfg.sweep.lambda1)
    if (v < 0.0) fail_key("sweep.lambda1", "values must be >= 0");
  for (double v : cfg.sweep.lambda2)
    if (v < 0.0) fail_key("sweep.lambda2", "values must be >= 0");
  for (double v : cfg.sweep.r)
    if (v < 0.0 || v > 1.0) fail_key("sweep.r", "values must lie in [0, 1]");
  for (Index v : cfg.sweep.n_w)
    if (v < 2) fail_key("sweep.n_w", "values must be >= 2");
  for (Index v : cfg.sweep.rho)
    if (v < 1) fail_key("sweep.rho", "values must be >= 1");
}

// --- canonical serialization ---------------------------------------------------

json data_json(const DataSection& d) {
  json j;
  j["source"] = d.source;
  j["idx_images"] = d.idx_images;
  j["idx_labels"] = d.idx_labels;
  j["n_per_class"] = d.n_per_class;
  j["n_classes"] = d.n_classes;
  j["public_classes"] = d.public_classes;
  j["private_classes"] = d.private_classes;
  return j;
}

json model_json(const ModelSection& m) {
  json j;
  j["hidden"] = m.hidden;
  j["epochs"] = m.epochs;
  j["lr"] = m.lr;
  j["batch_size"] = m.batch_size;
  j["holdout_fraction"] = m.holdout_fraction;
  return j;
}

json generator_json(const GeneratorSection& g) {
  json j;
  j["mode"] = g.mode;
  j["z_dim"] = g.z_dim;
  j["w_dim"] = g.w_dim;
  j["hidden"] = g.hidden;
  j["epochs"] = g.epochs;
  j["lr"] = g.lr;
  j["batch_size"] = g.batch_size;
  j["recon_warn_threshold"] = g.recon_warn_threshold;
  return j;
}

// Execution details (jobs) stay out of the canonical form on purpose: they
// cannot change any artifact byte.
json attack_json(const AttackSection& a) {
  json j;
  j["lambda1"] = a.lambda1;
  j["lambda2"] = a.lambda2;
  j["r"] = a.r;
  j["n_w"] = a.n_w;
  j["rho"] = a.rho;
  j["pool"] = a.pool;
  j["selected"] = a.selected;
  j["steps"] = a.steps;
  j["batch_size"] = a.batch_size;
  j["lr"] = a.lr;
  j["beta1"] = a.beta1;
  j["beta2"] = a.beta2;
  j["shift_ensemble"] = a.shift_ensemble;
  j["normalize_features"] = a.normalize_features;
  return j;
}

json sweep_json(const SweepSection& s) {
  json j;
  j["lambda1"] = s.lambda1;
  j["lambda2"] = s.lambda2;
  j["r"] = s.r;
  j["n_w"] = s.n_w;
  j["rho"] = s.rho;
  return j;
}

json resolved_json(const PipelineConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["data"] = data_json(cfg.data);
  j["target"] = model_json(cfg.target);
  j["evaluator"] = model_json(cfg.evaluator);
  j["generator"] = generator_json(cfg.generator);
  j["attack"] = attack_json(cfg.attack);
  j["metrics"] = json{{"prdc_k", cfg.prdc_k}};
  j["sweep"] = sweep_json(cfg.sweep);
  return j;
}

std::string digest_of(const std::string& text) {
  return hex16(fnv1a(text.data(), text.size()));
}

// --- artifact plumbing ----------------------------------------------------------

void stamp(Checkpoint& ck, const PipelineConfig& cfg, const std::string& scope) {
  ck.metadata["config_digest"] = config_digest(cfg);
  ck.metadata["scope_digest"] = scope_digest(cfg, scope);
}

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::vector<std::uint8_t> bytes = ck.encode();
  atomic_write(path, std::string(bytes.begin(), bytes.end()));
}

void write_resolved(const PipelineConfig& cfg) {
  atomic_write(cfg.out_dir + "/config.resolved.json", resolved_config_json(cfg));
}

Checkpoint load_input(const PipelineConfig& cfg, const std::string& rel, const char* producer) {
  const std::string path = cfg.out_dir + "/" + rel;
  if (!fs::exists(path))
    throw IoError("missing input '" + path + "' (run " + producer + " first)");
  return Checkpoint::load(path);
}

void check_scope(const Checkpoint& ck, const PipelineConfig& cfg, const std::string& scope,
                 const std::string& what, bool force, bool forceable = false) {
  if (force) return;
  const std::string want = scope_digest(cfg, scope);
  const std::string got = ck.meta_or("scope_digest", "<absent>");
  if (got != want)
    throw ConfigError("config digest mismatch for " + what + ": artifact carries " + got +
                      " but the current config expects " + want + " (rerun the upstream command" +
                      (forceable ? ", or pass --force to proceed anyway)" : ")"));
}

// inputs/outputs: manifest key -> absolute path to digest.
void write_manifest(const PipelineConfig& cfg, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& inputs,
                    const std::vector<std::string>& output_rels, double wall_seconds,
                    const json& extra) {
  json m;
  m["command"] = command;
  m["config_digest"] = config_digest(cfg);
  m["seed"] = cfg.seed;
  m["wall_seconds"] = wall_seconds;
  json in = json::object();
  for (const auto& [key, path] : inputs) in[key] = file_digest(path);
  m["inputs"] = in;
  json out = json::object();
  for (const std::string& rel : output_rels) out[rel] = file_digest(cfg.out_dir + "/" + rel);
  m["outputs"] = out;
  m["extra"] = extra;
  atomic_write(cfg.out_dir + "/manifests/" + command + ".json", m.dump(2) + "\n");
}

AttackConfig attack_config_for(const PipelineConfig& cfg, int target_class) {
  AttackConfig a;
  a.target_class = target_class;
  a.pool_size = cfg.attack.pool;
  a.n_selected = cfg.attack.selected;
  a.steps = cfg.attack.steps;
  a.batch_size = cfg.attack.batch_size;
  a.lr = cfg.attack.lr;
  a.beta1 = cfg.attack.beta1;
  a.beta2 = cfg.attack.beta2;
  a.lambda1 = cfg.attack.lambda1;
  a.lambda2 = cfg.attack.lambda2;
  a.n_w = cfg.attack.n_w;
  a.rho = cfg.attack.rho;
  a.retention = cfg.attack.r;
  a.shift_ensemble = cfg.attack.shift_ensemble;
  a.normalize_features = cfg.attack.normalize_features;
  a.seed = mix_seed(cfg.seed, 30 + static_cast<std::uint64_t>(target_class));
  return a;
}

std::vector<AttackResult> attack_all_classes(const PipelineConfig& cfg, const Classifier& target,
                                             const Generator& prior, int jobs) {
  const int k = static_cast<int>(target.n_classes());
  std::vector<AttackResult> results(k);
  if (jobs <= 1) {
    for (int c = 0; c < k; ++c) results[c] = run_attack(target, prior, attack_config_for(cfg, c));
    return results;
  }

  std::vector<std::exception_ptr> errors(k);
  std::atomic<int> next{0};
  const int workers = std::min(jobs, k);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const int c = next.fetch_add(1);
        if (c >= k) return;
        try {
          results[c] = run_attack(target, prior, attack_config_for(cfg, c));
        } catch (...) {
          errors[c] = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (int c = 0; c < k; ++c)
    if (errors[c]) std::rethrow_exception(errors[c]);
  return results;
}

// Runs every per-class inversion and writes attacks/class<c>.ck plus the
// attack manifest. `manifest_inputs` names the model files consumed.
void attack_and_write(const PipelineConfig& cfg, const Classifier& target, const Generator& prior,
                      int jobs,
                      const std::vector<std::pair<std::string, std::string>>& manifest_inputs) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<AttackResult> results = attack_all_classes(cfg, target, prior, jobs);
  const std::string method = attack_method_name(cfg);

  std::vector<std::string> outputs;
  json per_class = json::array();
  for (std::size_t c = 0; c < results.size(); ++c) {
    const AttackResult& res = results[c];
    Checkpoint ack;
    ack.metadata["kind"] = "attack_result";
    ack.metadata["method"] = method;
    ack.metadata["target_class"] = std::to_string(c);
    ack.metadata["lambda1"] = shortest_double(cfg.attack.lambda1);
    ack.metadata["lambda2"] = shortest_double(cfg.attack.lambda2);
    ack.metadata["synthesis_checksum"] = hex16(res.synthesis_checksum_after);
    ack.metadata["attack_seed"] =
        std::to_string(mix_seed(cfg.seed, 30 + static_cast<std::uint64_t>(c)));
    stamp(ack, cfg, "attack");
    ack.add("images", Tensor::from_matrix(res.images));
    ack.add("z", Tensor::from_matrix(res.z));
    Mat traj(static_cast<Index>(res.trajectory.size()), 4);
    for (std::size_t i = 0; i < res.trajectory.size(); ++i) {
      traj(static_cast<Index>(i), 0) = res.trajectory[i].total;
      traj(static_cast<Index>(i), 1) = res.trajectory[i].ce;
      traj(static_cast<Index>(i), 2) = res.trajectory[i].imr;
      traj(static_cast<Index>(i), 3) = res.trajectory[i].idr;
    }
    ack.add("trajectory", Tensor::from_matrix(traj));

    const std::string rel = "attacks/class" + std::to_string(c) + ".ck";
    write_checkpoint(cfg.out_dir + "/" + rel, ack);
    outputs.push_back(rel);

    per_class.push_back(json{{"class", c},
                             {"first_total", res.trajectory.front().total},
                             {"last_total", res.trajectory.back().total},
                             {"wall_seconds", res.wall_seconds}});
  }

  write_manifest(cfg, "attack", manifest_inputs, outputs, now_seconds_since(t0),
                 json{{"method", method}, {"classes", results.size()}, {"runs", per_class}});
}

// Loads attacks/class<c>.ck for every private class, measures each against the
// real private samples, and writes reports/report.csv plus the manifest.
std::vector<MetricsRow> evaluate_and_write(
    const PipelineConfig& cfg, const Classifier& evaluator, const Dataset& priv, bool force,
    std::vector<std::pair<std::string, std::string>> manifest_inputs) {
  const auto t0 = std::chrono::steady_clock::now();
  const int k = priv.label_max() + 1;

  // Load and digest-check everything before writing a single byte.
  std::vector<Checkpoint> artifacts;
  for (int c = 0; c < k; ++c) {
    const std::string rel = "attacks/class" + std::to_string(c) + ".ck";
    Checkpoint ack = load_input(cfg, rel, "attack");
    if (ack.meta_or("kind", "") != "attack_result")
      throw ParseError("checkpoint: kind '" + ack.meta_or("kind", "<missing>") +
                       "' is not an attack_result");
    check_scope(ack, cfg, "attack", rel, force, /*forceable=*/true);
    manifest_inputs.emplace_back(rel, cfg.out_dir + "/" + rel);
    artifacts.push_back(std::move(ack));
  }
  write_resolved(cfg);

  std::vector<MetricsRow> rows;
  for (int c = 0; c < k; ++c) {
    const Checkpoint& ack = artifacts[c];
    const Mat images = ack.get("images").to_matrix();

    std::vector<Index> keep;
    for (Index i = 0; i < priv.n(); ++i)
      if (priv.labels[static_cast<std::size_t>(i)] == c) keep.push_back(i);
    if (keep.empty())
      throw ContractError("evaluate: private dataset has no samples of class " +
                          std::to_string(c));
    Mat real(static_cast<Index>(keep.size()), priv.pixels.cols());
    for (std::size_t i = 0; i < keep.size(); ++i) real.row(static_cast<Index>(i)) = priv.pixels.row(keep[i]);

    rows.push_back(build_row(evaluator, images, real, c, ack.meta("method"), cfg.prdc_k));
  }

  const std::string csv = to_csv(rows, {"config_digest=" + config_digest(cfg),
                                        "seed=" + std::to_string(cfg.seed),
                                        "classes=" + std::to_string(k)});
  atomic_write(cfg.out_dir + "/reports/report.csv", csv);
  write_manifest(cfg, "evaluate", manifest_inputs, {"reports/report.csv"}, now_seconds_since(t0),
                 json{{"classes", k}});
  return rows;
}

}  // namespace

// --- configuration ---------------------------------------------------------------

PipelineConfig parse_pipeline_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config: top level must be a JSON object");

  check_keys(root, "", {"preset", "seed", "out_dir", "data", "target", "evaluator", "generator",
                        "attack", "metrics", "sweep"});

  PipelineConfig cfg;  // defaults are the desk preset
  if (const json* v = find(root, "preset")) {
    const std::string preset = as_string(*v, "preset");
    if (preset == "paper")
      apply_paper_preset(cfg.attack);
    else if (preset != "desk")
      fail_key("preset", "must be 'paper' or 'desk'");
  }
  if (const json* v = find(root, "seed")) cfg.seed = as_u64(*v, "seed");
  if (const json* v = find(root, "out_dir")) cfg.out_dir = as_string(*v, "out_dir");

  if (const json* o = find(root, "data")) {
    if (!o->is_object()) fail_key("data", "must be an object");
    check_keys(*o, "data.", {"source", "idx_images", "idx_labels", "n_per_class", "n_classes",
                             "public_classes", "private_classes"});
    if (const json* v = find(*o, "source")) cfg.data.source = as_string(*v, "data.source");
    if (const json* v = find(*o, "idx_images"))
      cfg.data.idx_images = as_string(*v, "data.idx_images");
    if (const json* v = find(*o, "idx_labels"))
      cfg.data.idx_labels = as_string(*v, "data.idx_labels");
    if (const json* v = find(*o, "n_per_class"))
      cfg.data.n_per_class = static_cast<Index>(as_integer(*v, "data.n_per_class"));
    if (const json* v = find(*o, "n_classes"))
      cfg.data.n_classes = static_cast<int>(as_integer(*v, "data.n_classes"));
    if (const json* v = find(*o, "public_classes"))
      cfg.data.public_classes = as_int_list(*v, "data.public_classes");
    if (const json* v = find(*o, "private_classes"))
      cfg.data.private_classes = as_int_list(*v, "data.private_classes");
  }

  if (const json* o = find(root, "target")) {
    if (!o->is_object()) fail_key("target", "must be an object");
    parse_model_section(*o, "target.", cfg.target);
  }
  if (const json* o = find(root, "evaluator")) {
    if (!o->is_object()) fail_key("evaluator", "must be an object");
    parse_model_section(*o, "evaluator.", cfg.evaluator);
  }

  if (const json* o = find(root, "generator")) {
    if (!o->is_object()) fail_key("generator", "must be an object");
    check_keys(*o, "generator.", {"mode", "z_dim", "w_dim", "hidden", "epochs", "lr",
                                  "batch_size", "recon_warn_threshold"});
    if (const json* v = find(*o, "mode")) cfg.generator.mode = as_string(*v, "generator.mode");
    if (const json* v = find(*o, "z_dim"))
      cfg.generator.z_dim = static_cast<Index>(as_integer(*v, "generator.z_dim"));
    if (const json* v = find(*o, "w_dim"))
      cfg.generator.w_dim = static_cast<Index>(as_integer(*v, "generator.w_dim"));
    if (const json* v = find(*o, "hidden"))
      cfg.generator.hidden = static_cast<Index>(as_integer(*v, "generator.hidden"));
    if (const json* v = find(*o, "epochs"))
      cfg.generator.epochs = static_cast<int>(as_integer(*v, "generator.epochs"));
    if (const json* v = find(*o, "lr")) cfg.generator.lr = as_double(*v, "generator.lr");
    if (const json* v = find(*o, "batch_size"))
      cfg.generator.batch_size = static_cast<Index>(as_integer(*v, "generator.batch_size"));
    if (const json* v = find(*o, "recon_warn_threshold"))
      cfg.generator.recon_warn_threshold = as_double(*v, "generator.recon_warn_threshold");
  }

  if (const json* o = find(root, "attack")) {
    if (!o->is_object()) fail_key("attack", "must be an object");
    check_keys(*o, "attack.",
               {"lambda1", "lambda2", "r", "n_w", "rho", "pool", "selected", "steps",
                "batch_size", "lr", "beta1", "beta2", "shift_ensemble",
                "normalize_features", "jobs"});
    AttackSection& a = cfg.attack;
    if (const json* v = find(*o, "lambda1")) a.lambda1 = as_double(*v, "attack.lambda1");
    if (const json* v = find(*o, "lambda2")) a.lambda2 = as_double(*v, "attack.lambda2");
    if (const json* v = find(*o, "r")) a.r = as_double(*v, "attack.r");
    if (const json* v = find(*o, "n_w")) a.n_w = static_cast<Index>(as_integer(*v, "attack.n_w"));
    if (const json* v = find(*o, "rho")) a.rho = static_cast<Index>(as_integer(*v, "attack.rho"));
    if (const json* v = find(*o, "pool"))
      a.pool = static_cast<Index>(as_integer(*v, "attack.pool"));
    if (const json* v = find(*o, "selected"))
      a.selected = static_cast<Index>(as_integer(*v, "attack.selected"));
    if (const json* v = find(*o, "steps"))
      a.steps = static_cast<int>(as_integer(*v, "attack.steps"));
    if (const json* v = find(*o, "batch_size"))
      a.batch_size = static_cast<Index>(as_integer(*v, "attack.batch_size"));
    if (const json* v = find(*o, "lr")) a.lr = as_double(*v, "attack.lr");
    if (const json* v = find(*o, "beta1")) a.beta1 = as_double(*v, "attack.beta1");
    if (const json* v = find(*o, "beta2")) a.beta2 = as_double(*v, "attack.beta2");
    if (const json* v = find(*o, "shift_ensemble"))
      a.shift_ensemble = as_bool(*v, "attack.shift_ensemble");
    if (const json* v = find(*o, "normalize_features"))
      a.normalize_features = as_bool(*v, "attack.normalize_features");
    if (const json* v = find(*o, "jobs")) a.jobs = static_cast<int>(as_integer(*v, "attack.jobs"));
  }

  if (const json* o = find(root, "metrics")) {
    if (!o->is_object()) fail_key("metrics", "must be an object");
    check_keys(*o, "metrics.", {"prdc_k"});
    if (const json* v = find(*o, "prdc_k"))
      cfg.prdc_k = static_cast<Index>(as_integer(*v, "metrics.prdc_k"));
  }

  if (const json* o = find(root, "sweep")) {
    if (!o->is_object()) fail_key("sweep", "must be an object");
    check_keys(*o, "sweep.", {"lambda1", "lambda2", "r", "n_w", "rho"});
    if (const json* v = find(*o, "lambda1"))
      cfg.sweep.lambda1 = as_double_list(*v, "sweep.lambda1");
    if (const json* v = find(*o, "lambda2"))
      cfg.sweep.lambda2 = as_double_list(*v, "sweep.lambda2");
    if (const json* v = find(*o, "r")) cfg.sweep.r = as_double_list(*v, "sweep.r");
    if (const json* v = find(*o, "n_w")) cfg.sweep.n_w = as_index_list(*v, "sweep.n_w");
    if (const json* v = find(*o, "rho")) cfg.sweep.rho = as_index_list(*v, "sweep.rho");
  }

  validate_config(cfg);
  return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  return parse_pipeline_config(read_file(path));
}

std::string resolved_config_json(const PipelineConfig& cfg) {
  return resolved_json(cfg).dump(2) + "\n";
}

std::string config_digest(const PipelineConfig& cfg) {
  return digest_of(resolved_config_json(cfg));
}

std::string scope_digest(const PipelineConfig& cfg, const std::string& scope) {
  json j;
  j["seed"] = cfg.seed;
  j["data"] = data_json(cfg.data);
  if (scope == "data") {
  } else if (scope == "target") {
    j["target"] = model_json(cfg.target);
  } else if (scope == "evaluator") {
    j["evaluator"] = model_json(cfg.evaluator);
  } else if (scope == "generator") {
    j["generator"] = generator_json(cfg.generator);
  } else if (scope == "attack") {
    j["target"] = model_json(cfg.target);
    j["generator"] = generator_json(cfg.generator);
    j["attack"] = attack_json(cfg.attack);
  } else {
    throw ContractError("scope_digest: unknown scope '" + scope + "'");
  }
  return digest_of(j.dump());
}

std::string attack_method_name(const PipelineConfig& cfg) {
  return (cfg.attack.lambda1 == 0.0 && cfg.attack.lambda2 == 0.0) ? "ce" : "dmmia";
}

// --- filesystem helpers ------------------------------------------------------------

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.is_open()) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << f.rdbuf();
  if (f.bad()) throw IoError("read failed for '" + path + "'");
  return ss.str();
}

void atomic_write(const std::string& path, const std::string& bytes) {
  const fs::path p(path);
  std::error_code ec;
  if (p.has_parent_path()) {
    fs::create_directories(p.parent_path(), ec);
    if (ec)
      throw IoError("cannot create directory '" + p.parent_path().string() + "': " + ec.message());
  }
#ifdef _WIN32
  const std::string tmp = path + ".tmp" + std::to_string(_getpid());
#else
  const std::string tmp = path + ".tmp" + std::to_string(getpid());
#endif
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out.is_open()) throw IoError("cannot open '" + tmp + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out.good()) {
      out.close();
      fs::remove(tmp, ec);
      throw IoError("write failed for '" + tmp + "'");
    }
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    std::error_code ec2;
    fs::remove(tmp, ec2);
    throw IoError("cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
  }
}

std::string file_digest(const std::string& path) {
  const std::string bytes = read_file(path);
  return "fnv:" + hex16(fnv1a(bytes.data(), bytes.size()));
}

// --- dataset container ---------------------------------------------------------------

Checkpoint dataset_to_checkpoint(const Dataset& ds) {
  ds.validate();
  Checkpoint ck;
  ck.metadata["kind"] = "dataset";
  ck.metadata["rows"] = std::to_string(ds.rows);
  ck.metadata["cols"] = std::to_string(ds.cols);
  ck.add("pixels", Tensor::from_matrix(ds.pixels));
  Mat labels(static_cast<Index>(ds.labels.size()), 1);
  for (std::size_t i = 0; i < ds.labels.size(); ++i)
    labels(static_cast<Index>(i), 0) = ds.labels[i];
  ck.add("labels", Tensor::from_matrix(labels));
  return ck;
}

Dataset dataset_from_checkpoint(const Checkpoint& ck) {
  if (ck.meta_or("kind", "") != "dataset")
    throw ParseError("checkpoint: kind '" + ck.meta_or("kind", "<missing>") +
                     "' is not a dataset");
  Dataset ds;
  try {
    ds.rows = static_cast<Index>(std::stoll(ck.meta("rows")));
    ds.cols = static_cast<Index>(std::stoll(ck.meta("cols")));
  } catch (const std::exception&) {
    throw ParseError("checkpoint: dataset rows/cols metadata is not numeric");
  }
  ds.pixels = ck.get("pixels").to_matrix();
  const Tensor labels = ck.get("labels");
  ds.labels.resize(static_cast<std::size_t>(labels.rows()));
  for (Index i = 0; i < labels.rows(); ++i) {
    const double v = labels.value()[i];
    const long long iv = std::llround(v);
    if (v != static_cast<double>(iv) || iv < 0)
      throw ParseError("checkpoint: dataset label at row " + std::to_string(i) +
                       " is not a non-negative integer");
    ds.labels[static_cast<std::size_t>(i)] = static_cast<int>(iv);
  }
  ds.validate();
  return ds;
}

// --- image grids -----------------------------------------------------------------------

std::string render_grid(const Mat& images, Index cols) {
  if (images.rows() < 1 || images.cols() < 1)
    throw ContractError("render_grid: needs at least one image");
  if (cols < 1) throw ContractError("render_grid: cols must be >= 1");
  const Index side = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(images.cols()))));
  if (side * side != images.cols())
    throw ContractError("render_grid: images with " + std::to_string(images.cols()) +
                        " pixels are not square");

  const Index n = images.rows();
  const Index grid_rows = (n + cols - 1) / cols;
  const Index width = cols * side + (cols - 1);
  const Index height = grid_rows * side + (grid_rows - 1);

  std::string header =
      "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::string payload(static_cast<std::size_t>(width * height), '\0');

  // Separator lines between tiles.
  for (Index c = 1; c < cols; ++c) {
    const Index x = c * (side + 1) - 1;
    for (Index y = 0; y < height; ++y)
      payload[static_cast<std::size_t>(y * width + x)] = static_cast<char>(255);
  }
  for (Index r = 1; r < grid_rows; ++r) {
    const Index y = r * (side + 1) - 1;
    for (Index x = 0; x < width; ++x)
      payload[static_cast<std::size_t>(y * width + x)] = static_cast<char>(255);
  }

  for (Index i = 0; i < n; ++i) {
    const Index oy = (i / cols) * (side + 1);
    const Index ox = (i % cols) * (side + 1);
    for (Index py = 0; py < side; ++py)
      for (Index px = 0; px < side; ++px) {
        long q = std::lround(255.0 * images(i, py * side + px));
        q = std::max(0l, std::min(255l, q));
        payload[static_cast<std::size_t>((oy + py) * width + ox + px)] =
            static_cast<char>(static_cast<unsigned char>(q));
      }
  }
  return header + payload;
}

// --- subcommands --------------------------------------------------------------------------

void run_prepare_data(const PipelineConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();

  Dataset full;
  std::vector<std::pair<std::string, std::string>> inputs;
  if (cfg.data.source == "synthetic") {
    full = synth_digits(cfg.data.n_per_class, cfg.data.n_classes, mix_seed(cfg.seed, 10));
  } else {
    full = load_idx(cfg.data.idx_images, cfg.data.idx_labels);
    inputs.emplace_back(cfg.data.idx_images, cfg.data.idx_images);
    inputs.emplace_back(cfg.data.idx_labels, cfg.data.idx_labels);
  }

  const SplitResult split =
      split_public_private(full, {cfg.data.public_classes, cfg.data.private_classes});

  write_resolved(cfg);

  Checkpoint pub = dataset_to_checkpoint(split.public_ds);
  stamp(pub, cfg, "data");
  write_checkpoint(cfg.out_dir + "/data/public.ck", pub);

  Checkpoint priv = dataset_to_checkpoint(split.private_ds);
  stamp(priv, cfg, "data");
  std::string label_map;
  for (const auto& [orig, dense] : split.label_map) {
    if (!label_map.empty()) label_map += ";";
    label_map += std::to_string(orig) + ":" + std::to_string(dense);
  }
  priv.metadata["label_map"] = label_map;
  write_checkpoint(cfg.out_dir + "/data/private.ck", priv);

  write_manifest(cfg, "prepare-data", inputs, {"data/public.ck", "data/private.ck"},
                 now_seconds_since(t0),
                 json{{"source", cfg.data.source},
                      {"n_public", split.public_ds.n()},
                      {"n_private", split.private_ds.n()}});
}

namespace {

TrainReport train_model_command(const PipelineConfig& cfg, const ModelSection& section,
                                const char* command, const char* artifact_rel,
                                const std::string& scope, std::uint64_t salt) {
  const auto t0 = std::chrono::steady_clock::now();
  const Checkpoint dck = load_input(cfg, "data/private.ck", "prepare-data");
  check_scope(dck, cfg, "data", "data/private.ck", false);
  const Dataset priv = dataset_from_checkpoint(dck);

  TrainConfig tc;
  tc.epochs = section.epochs;
  tc.lr = section.lr;
  tc.batch_size = section.batch_size;
  tc.holdout_fraction = section.holdout_fraction;
  tc.seed = mix_seed(cfg.seed, salt);
  tc.expected_classes = static_cast<int>(cfg.data.private_classes.size());

  auto [clf, report] = train_classifier(priv, section.hidden, tc);

  write_resolved(cfg);
  Checkpoint ck = clf.to_checkpoint();
  stamp(ck, cfg, scope);
  write_checkpoint(cfg.out_dir + "/" + artifact_rel, ck);

  write_manifest(cfg, command, {{"data/private.ck", cfg.out_dir + "/data/private.ck"}},
                 {artifact_rel}, now_seconds_since(t0),
                 json{{"train_acc", report.train_acc},
                      {"holdout_acc", report.holdout_acc},
                      {"final_loss", report.final_loss},
                      {"epochs", report.epochs}});
  return report;
}

}  // namespace

TrainReport run_train_target(const PipelineConfig& cfg) {
  return train_model_command(cfg, cfg.target, "train-target", "models/target.ck", "target", 20);
}

TrainReport run_train_eval(const PipelineConfig& cfg) {
  return train_model_command(cfg, cfg.evaluator, "train-eval", "models/evaluator.ck", "evaluator",
                             21);
}

PretrainReport run_pretrain_generator(const PipelineConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const Checkpoint dck = load_input(cfg, "data/public.ck", "prepare-data");
  check_scope(dck, cfg, "data", "data/public.ck", false);
  const Dataset pub = dataset_from_checkpoint(dck);

  GeneratorTrainConfig gc;
  gc.mode = cfg.generator.mode;
  gc.z_dim = cfg.generator.z_dim;
  gc.w_dim = cfg.generator.w_dim;
  gc.hidden = cfg.generator.hidden;
  gc.epochs = cfg.generator.epochs;
  gc.lr = cfg.generator.lr;
  gc.batch_size = cfg.generator.batch_size;
  gc.recon_warn_threshold = cfg.generator.recon_warn_threshold;
  gc.seed = mix_seed(cfg.seed, 22);

  auto [gen, report] = pretrain_generator(pub, gc);

  write_resolved(cfg);
  Checkpoint ck = gen.to_checkpoint();
  stamp(ck, cfg, "generator");
  write_checkpoint(cfg.out_dir + "/models/generator.ck", ck);

  write_manifest(cfg, "pretrain-generator",
                 {{"data/public.ck", cfg.out_dir + "/data/public.ck"}}, {"models/generator.ck"},
                 now_seconds_since(t0),
                 json{{"mode", report.mode},
                      {"recon_mse", report.recon_mse},
                      {"recon_warning", report.recon_warning},
                      {"final_loss", report.final_loss}});
  return report;
}

void run_attack_command(const PipelineConfig& cfg, int jobs_override) {
  const Checkpoint tck = load_input(cfg, "models/target.ck", "train-target");
  check_scope(tck, cfg, "target", "models/target.ck", false);
  const Checkpoint gck = load_input(cfg, "models/generator.ck", "pretrain-generator");
  check_scope(gck, cfg, "generator", "models/generator.ck", false);

  const Classifier target = Classifier::from_checkpoint(tck);
  const Generator prior = Generator::from_checkpoint(gck);

  write_resolved(cfg);
  const int jobs = jobs_override > 0 ? jobs_override : cfg.attack.jobs;
  attack_and_write(cfg, target, prior, jobs,
                   {{"models/target.ck", cfg.out_dir + "/models/target.ck"},
                    {"models/generator.ck", cfg.out_dir + "/models/generator.ck"}});
}

std::vector<MetricsRow> run_evaluate(const PipelineConfig& cfg, bool force) {
  const Checkpoint eck = load_input(cfg, "models/evaluator.ck", "train-eval");
  check_scope(eck, cfg, "evaluator", "models/evaluator.ck", force, /*forceable=*/true);
  const Checkpoint dck = load_input(cfg, "data/private.ck", "prepare-data");
  check_scope(dck, cfg, "data", "data/private.ck", force, /*forceable=*/true);

  const Classifier evaluator = Classifier::from_checkpoint(eck);
  const Dataset priv = dataset_from_checkpoint(dck);

  return evaluate_and_write(cfg, evaluator, priv, force,
                            {{"models/evaluator.ck", cfg.out_dir + "/models/evaluator.ck"},
                             {"data/private.ck", cfg.out_dir + "/data/private.ck"}});
}

void run_theory_check(const PipelineConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  write_resolved(cfg);

  struct Row {
    std::string name;
    double lhs, rhs, gap;
    bool pass;
  };
  std::vector<Row> rows;

  {
    const Vec uniform10 = Vec::Constant(10, 0.1);
    const double tr = fisher_trace_softmax(uniform10);
    rows.push_back({"trace_uniform10", tr, 100.0, std::abs(tr - 100.0),
                    std::abs(tr - 100.0) <= 1e-9});
  }
  {
    Vec p(4);
    p << 0.5, 0.25, 0.125, 0.125;
    const FisherEstimate est = mc_fisher_trace(p, 1000000, mix_seed(cfg.seed, 40));
    const double rel = std::abs(est.mc_trace - est.exact_trace) / est.exact_trace;
    rows.push_back({"trace_mc", est.exact_trace, est.mc_trace, rel, rel <= 0.02});
  }

  const Classifier probe_clf({6, 10, 4}, mix_seed(cfg.seed, 41));
  Rng prng(mix_seed(cfg.seed, 42));
  auto draw_probe = [&](double eps) {
    Mat x(1, 6), h(1, 6);
    for (Index i = 0; i < 6; ++i) x(0, i) = prng.uniform();
    for (Index i = 0; i < 6; ++i) h(0, i) = prng.normal();
    return make_probe(x, h, eps);
  };

  for (int i = 0; i < 20; ++i) {
    const PerturbationProbe probe = draw_probe(1e-3);
    const auto [lhs, rhs] = pullback_identity_check(probe_clf, probe);
    const double gap = std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs));
    rows.push_back({"pullback_probe_" + std::to_string(i), lhs, rhs, gap, gap <= 1e-8});
  }

  for (int i = 0; i < 20; ++i) {
    PerturbationProbe probe = draw_probe(1e-2);
    double gap[3];
    const double ladder[3] = {1e-2, 5e-3, 2.5e-3};
    for (int e = 0; e < 3; ++e) {
      probe.eps = ladder[e];
      const FisherEstimate est = kl_taylor_probe(probe_clf, probe);
      gap[e] = std::abs(est.exact_kl - est.quadratic_form) /
               std::max(est.quadratic_form, 1e-300);
    }
    const bool pass_a = gap[1] <= 0.75 * gap[0] + 1e-12;
    const bool pass_b = gap[2] <= 0.75 * gap[1] + 1e-12;
    rows.push_back({"kl_ratio_a_probe_" + std::to_string(i), gap[0], gap[1],
                    gap[0] > 0.0 ? gap[1] / gap[0] : 0.0, pass_a});
    rows.push_back({"kl_ratio_b_probe_" + std::to_string(i), gap[1], gap[2],
                    gap[1] > 0.0 ? gap[2] / gap[1] : 0.0, pass_b});
  }

  for (int k : {2, 5, 10}) {
    const Vec v = simplex_min_check(k, cfg.seed);
    double dev = 0.0;
    for (Index i = 0; i < v.size(); ++i) dev = std::max(dev, std::abs(v[i] - 1.0 / k));
    rows.push_back({"simplex_k" + std::to_string(k), dev, 0.0, dev, dev <= 1e-6});
  }

  std::string csv = "check,lhs,rhs,gap,pass\n";
  int failed = 0;
  for (const Row& r : rows) {
    csv += r.name + "," + fmt17(r.lhs) + "," + fmt17(r.rhs) + "," + fmt17(r.gap) + "," +
           (r.pass ? "1" : "0") + "\n";
    if (!r.pass) ++failed;
  }
  atomic_write(cfg.out_dir + "/theory/theory.csv", csv);
  write_manifest(cfg, "theory-check", {}, {"theory/theory.csv"}, now_seconds_since(t0),
                 json{{"checks", rows.size()}, {"failed", failed}});

  if (failed > 0)
    throw NumericalError("theory-check: " + std::to_string(failed) + " of " +
                         std::to_string(rows.size()) + " checks failed (see theory/theory.csv)");
}

void run_sweep(const PipelineConfig& cfg, bool force) {
  const auto t0 = std::chrono::steady_clock::now();

  const Checkpoint tck = load_input(cfg, "models/target.ck", "train-target");
  check_scope(tck, cfg, "target", "models/target.ck", force, /*forceable=*/true);
  const Checkpoint gck = load_input(cfg, "models/generator.ck", "pretrain-generator");
  check_scope(gck, cfg, "generator", "models/generator.ck", force, /*forceable=*/true);
  const Checkpoint eck = load_input(cfg, "models/evaluator.ck", "train-eval");
  check_scope(eck, cfg, "evaluator", "models/evaluator.ck", force, /*forceable=*/true);
  const Checkpoint dck = load_input(cfg, "data/private.ck", "prepare-data");
  check_scope(dck, cfg, "data", "data/private.ck", force, /*forceable=*/true);

  const Classifier target = Classifier::from_checkpoint(tck);
  const Generator prior = Generator::from_checkpoint(gck);
  const Classifier evaluator = Classifier::from_checkpoint(eck);
  const Dataset priv = dataset_from_checkpoint(dck);

  // The base directory keeps the resolved config of the run that built its
  // models; a sweep is an overlay whose identity lives in the cell directories
  // and in manifests/sweep.json.

  const auto l1s = cfg.sweep.lambda1.empty() ? std::vector<double>{cfg.attack.lambda1}
                                             : cfg.sweep.lambda1;
  const auto l2s = cfg.sweep.lambda2.empty() ? std::vector<double>{cfg.attack.lambda2}
                                             : cfg.sweep.lambda2;
  const auto nws = cfg.sweep.n_w.empty() ? std::vector<Index>{cfg.attack.n_w} : cfg.sweep.n_w;
  const auto rhos = cfg.sweep.rho.empty() ? std::vector<Index>{cfg.attack.rho} : cfg.sweep.rho;
  const auto rs = cfg.sweep.r.empty() ? std::vector<double>{cfg.attack.r} : cfg.sweep.r;

  const std::vector<std::pair<std::string, std::string>> model_inputs = {
      {"models/target.ck", cfg.out_dir + "/models/target.ck"},
      {"models/generator.ck", cfg.out_dir + "/models/generator.ck"}};
  const std::vector<std::pair<std::string, std::string>> eval_inputs = {
      {"models/evaluator.ck", cfg.out_dir + "/models/evaluator.ck"},
      {"data/private.ck", cfg.out_dir + "/data/private.ck"}};

  std::vector<MetricsRow> aggregate;
  int cell = 0;
  for (double l1 : l1s)
    for (double l2 : l2s)
      for (Index nw : nws)
        for (Index rho : rhos)
          for (double r : rs) {
            PipelineConfig cc = cfg;
            cc.sweep = SweepSection{};
            cc.attack.lambda1 = l1;
            cc.attack.lambda2 = l2;
            cc.attack.n_w = nw;
            cc.attack.rho = rho;
            cc.attack.r = r;
            cc.out_dir = cfg.out_dir + "/sweep/cell" + std::to_string(cell);
            if (rho >= nw)
              throw ConfigError("sweep: cell " + std::to_string(cell) + ": rho " +
                                std::to_string(rho) + " must stay below n_w " +
                                std::to_string(nw));

            write_resolved(cc);
            attack_and_write(cc, target, prior, cfg.attack.jobs, model_inputs);
            const std::vector<MetricsRow> rows =
                evaluate_and_write(cc, evaluator, priv, force, eval_inputs);

            MetricsRow agg;
            agg.target_class = -1;
            agg.method = attack_method_name(cc) + ";l1=" + shortest_double(l1) +
                         ";l2=" + shortest_double(l2) + ";nw=" + std::to_string(nw) +
                         ";rho=" + std::to_string(rho) + ";r=" + shortest_double(r);
            const double n = static_cast<double>(rows.size());
            for (const MetricsRow& row : rows) {
              agg.acc1 += row.acc1;
              agg.acc5 += row.acc5;
              agg.l2_eval += row.l2_eval;
              agg.cos_eval += row.cos_eval;
              agg.fid += row.fid;
              agg.precision += row.precision;
              agg.recall += row.recall;
              agg.density += row.density;
              agg.coverage += row.coverage;
              agg.div += row.div;
            }
            agg.acc1 /= n;
            agg.acc5 /= n;
            agg.l2_eval /= n;
            agg.cos_eval /= n;
            agg.fid /= n;
            agg.precision /= n;
            agg.recall /= n;
            agg.density /= n;
            agg.coverage /= n;
            agg.div /= n;
            aggregate.push_back(agg);
            ++cell;
          }

  const std::string csv = to_csv(aggregate, {"config_digest=" + config_digest(cfg),
                                             "cells=" + std::to_string(cell)});
  atomic_write(cfg.out_dir + "/sweep/sweep.csv", csv);

  std::vector<std::pair<std::string, std::string>> inputs = model_inputs;
  inputs.insert(inputs.end(), eval_inputs.begin(), eval_inputs.end());
  write_manifest(cfg, "sweep", inputs, {"sweep/sweep.csv"}, now_seconds_since(t0),
                 json{{"cells", cell}});
}

void run_report(const std::vector<std::string>& run_dirs, const std::string& out_dir,
                bool allow_config_drift, Index grid_cols) {
  if (run_dirs.empty()) throw ContractError("report: needs at least one run directory");
  if (grid_cols < 1) throw ContractError("report: grid columns must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();

  struct RunInfo {
    std::string dir;
    json resolved;
    std::string digest;
    std::vector<MetricsRow> rows;
  };
  std::vector<RunInfo> runs;
  for (const std::string& dir : run_dirs) {
    RunInfo info;
    info.dir = dir;
    const std::string text = read_file(dir + "/config.resolved.json");
    try {
      info.resolved = json::parse(text);
    } catch (const json::exception& e) {
      throw ConfigError("report: '" + dir + "/config.resolved.json': " + e.what());
    }
    info.digest = digest_of(text);
    info.rows = parse_csv(read_file(dir + "/reports/report.csv"));
    runs.push_back(std::move(info));
  }

  // Outside the loss weights, merged runs must be the same experiment.
  if (!allow_config_drift) {
    auto stripped = [](json j) {
      if (j.contains("attack")) {
        j["attack"].erase("lambda1");
        j["attack"].erase("lambda2");
      }
      return j.dump();
    };
    const std::string reference = stripped(runs.front().resolved);
    for (std::size_t i = 1; i < runs.size(); ++i)
      if (stripped(runs[i].resolved) != reference)
        throw ConfigError("report: run configs differ beyond attack.lambda1/lambda2: '" +
                          runs.front().dir + "' vs '" + runs[i].dir +
                          "' (pass --allow-config-drift to merge anyway)");
  }

  std::vector<MetricsRow> merged;
  std::vector<std::string> comments = {"merged_runs=" + std::to_string(runs.size())};
  for (std::size_t i = 0; i < runs.size(); ++i) {
    comments.push_back("run" + std::to_string(i) + "_dir=" + runs[i].dir);
    comments.push_back("run" + std::to_string(i) + "_digest=" + runs[i].digest);
    merged.insert(merged.end(), runs[i].rows.begin(), runs[i].rows.end());
  }
  atomic_write(out_dir + "/merged.csv", to_csv(merged, comments));

  // One grid per attack artifact; names collide only if two runs share a method.
  std::vector<std::string> outputs = {"merged.csv"};
  std::vector<std::string> used;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    for (int c = 0;; ++c) {
      const std::string path = runs[i].dir + "/attacks/class" + std::to_string(c) + ".ck";
      if (!fs::exists(path)) break;
      const Checkpoint ack = Checkpoint::load(path);
      std::string name = ack.meta_or("method", "run" + std::to_string(i));
      for (const std::string& u : used)
        if (u == name + "_class" + std::to_string(c)) name += "_run" + std::to_string(i);
      used.push_back(name + "_class" + std::to_string(c));
      const std::string rel = "grids/" + name + "_class" + std::to_string(c) + ".pgm";
      atomic_write(out_dir + "/" + rel,
                   render_grid(ack.get("images").to_matrix(), grid_cols));
      outputs.push_back(rel);
    }
  }

  // Per-method means over the merged rows.
  std::ostringstream summary;
  summary << "inversion report\n================\n";
  std::vector<std::string> methods;
  for (const MetricsRow& r : merged)
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
      methods.push_back(r.method);
  auto mean_of = [&](const std::string& m, auto field) {
    double total = 0.0;
    int n = 0;
    for (const MetricsRow& r : merged)
      if (r.method == m) {
        total += field(r);
        ++n;
      }
    return total / std::max(1, n);
  };
  for (const std::string& m : methods) {
    char line[256];
    std::snprintf(line, sizeof line,
                  "method %-8s acc1=%8.4f acc5=%8.4f fid=%10.4f div=%8.4f\n", m.c_str(),
                  mean_of(m, [](const MetricsRow& r) { return r.acc1; }),
                  mean_of(m, [](const MetricsRow& r) { return r.acc5; }),
                  mean_of(m, [](const MetricsRow& r) { return r.fid; }),
                  mean_of(m, [](const MetricsRow& r) { return r.div; }));
    summary << line;
  }
  if (methods.size() == 2) {
    const std::string& a = methods[0];
    const std::string& b = methods[1];
    char line[256];
    std::snprintf(line, sizeof line, "delta(%s - %s): acc1=%+.4f div=%+.4f\n", a.c_str(),
                  b.c_str(),
                  mean_of(a, [](const MetricsRow& r) { return r.acc1; }) -
                      mean_of(b, [](const MetricsRow& r) { return r.acc1; }),
                  mean_of(a, [](const MetricsRow& r) { return r.div; }) -
                      mean_of(b, [](const MetricsRow& r) { return r.div; }));
    summary << line;
  }
  atomic_write(out_dir + "/summary.txt", summary.str());
  outputs.push_back("summary.txt");

  json m;
  m["command"] = "report";
  m["wall_seconds"] = now_seconds_since(t0);
  json in = json::object();
  for (const RunInfo& r : runs) in[r.dir] = r.digest;
  m["inputs"] = in;
  json out = json::object();
  for (const std::string& rel : outputs) out[rel] = file_digest(out_dir + "/" + rel);
  m["outputs"] = out;
  atomic_write(out_dir + "/manifests/report.json", m.dump(2) + "\n");
}

}  // namespace dmmia
