#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "roiattn/checkpoint.hpp"
#include "roiattn/common.hpp"
#include "roiattn/data.hpp"
#include "roiattn/metrics.hpp"
#include "roiattn/model.hpp"
#include "roiattn/train.hpp"

namespace {

using nlohmann::json;
using namespace roiattn;

constexpr double kGradCheckThreshold = 1e-4;

struct Timer {
  std::chrono::steady_clock::time_point start =
      std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start)
        .count();
  }
};

void write_manifest(const std::string& out_dir, const std::string& command,
                    std::uint64_t seed, const json& config, const json& inputs,
                    const json& outputs, double duration_seconds) {
  json j{{"command", command},        {"tool_version", kVersion},
         {"seed", seed},              {"config", config},
         {"inputs", inputs},          {"outputs", outputs},
         {"duration_seconds", duration_seconds}};
  const std::string path = out_dir + "/" + command + "_manifest.json";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write manifest: " + path);
  out << j.dump(2) << '\n';
}

void ensure_out_dir(const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec)
    throw ValidationError("cannot create out-dir " + out_dir + ": " +
                          ec.message());
}

json synth_config_json(const SynthConfig& cfg) {
  return json{{"n", cfg.n},
              {"k", cfg.k},
              {"a", cfg.a},
              {"signal_strength", cfg.signal_strength},
              {"noise_std", cfg.noise_std},
              {"positive_rate", cfg.positive_rate},
              {"seed", cfg.seed}};
}

json model_config_json(const ModelConfig& cfg) {
  return json{{"a", cfg.a},
              {"d", cfg.d},
              {"H", cfg.H},
              {"L", cfg.L},
              {"mlp_ratio", cfg.mlp_ratio},
              {"rope_base", cfg.rope_base},
              {"rope_scale", cfg.rope_scale},
              {"readout", to_string(cfg.readout)},
              {"use_rope", cfg.use_rope}};
}

json train_config_json(const TrainConfig& cfg) {
  return json{{"lr", cfg.lr},
              {"beta1", cfg.beta1},
              {"beta2", cfg.beta2},
              {"adam_eps", cfg.adam_eps},
              {"batch_size", cfg.batch_size},
              {"epochs", cfg.epochs},
              {"patience", cfg.patience},
              {"seed", cfg.seed},
              {"lambda_rep", cfg.lambda_rep},
              {"val_fraction", cfg.val_fraction}};
}

// Shared model/train option plumbing for train and ablate.
struct FitOptions {
  std::string dataset_path;
  std::string out_dir = ".";
  ModelConfig model;
  TrainConfig train;
  std::string readout_name = "anchor";
  bool no_rope = false;

  void add_to(CLI::App* sub, bool with_readout_flags) {
    sub->add_option("dataset", dataset_path, "training dataset (JSONL)")
        ->required();
    sub->add_option("--out-dir", out_dir, "output directory");
    sub->add_option("--d", model.d, "model dim");
    sub->add_option("--heads", model.H, "attention heads");
    sub->add_option("--depth", model.L, "transformer blocks");
    sub->add_option("--mlp-ratio", model.mlp_ratio, "FFN expansion");
    sub->add_option("--rope-base", model.rope_base, "rotary base");
    sub->add_option("--rope-scale", model.rope_scale,
                    "coordinate-to-angle scale");
    if (with_readout_flags) {
      sub->add_option("--readout", readout_name,
                      "anchor|meanpool|maxpool|maxpool_raw");
      sub->add_flag("--no-rope", no_rope, "disable rotary embeddings");
    }
    sub->add_option("--lr", train.lr, "learning rate");
    sub->add_option("--beta1", train.beta1, "Adam beta1");
    sub->add_option("--beta2", train.beta2, "Adam beta2");
    sub->add_option("--adam-eps", train.adam_eps, "Adam epsilon");
    sub->add_option("--batch-size", train.batch_size, "batch size");
    sub->add_option("--epochs", train.epochs, "max epochs");
    sub->add_option("--patience", train.patience, "early-stop patience");
    sub->add_option("--lambda-rep", train.lambda_rep,
                    "repulsive loss weight");
    sub->add_option("--val-fraction", train.val_fraction,
                    "validation fraction");
    sub->add_option("--seed", train.seed, "run seed");
  }

  // Fills model.a/k-independent fields from flags; a comes from the data.
  void finalize(const Dataset& data) {
    if (data.empty()) throw ValidationError("empty dataset");
    model.a = static_cast<std::size_t>(data[0].rois[0].embedding.size());
    model.readout = parse_readout(readout_name);
    model.use_rope = !no_rope;
    validate(model);
    validate(train);
  }
};

ScoredSet score_dataset(const Dataset& data, const ModelParams& params,
                        const ModelConfig& cfg) {
  ScoredSet s;
  s.scores.reserve(data.size());
  s.labels.reserve(data.size());
  for (const auto& rec : data) {
    s.scores.push_back(model_forward(rec, params, cfg).y_hat);
    s.labels.push_back(rec.label);
  }
  return s;
}

int run_synth(const SynthConfig& cfg, std::string out_path,
              const std::string& out_dir) {
  Timer timer;
  ensure_out_dir(out_dir);
  if (out_path.empty()) out_path = out_dir + "/synth.jsonl";
  validate(cfg);
  Dataset data = generate_synthetic(cfg);
  write_dataset(data, out_path);
  std::cout << "wrote " << data.size() << " records to " << out_path << "\n";
  write_manifest(out_dir, "synth", cfg.seed, synth_config_json(cfg),
                 json::object(), json{{"dataset", out_path}}, timer.seconds());
  return 0;
}

int run_train(FitOptions& opt, std::string checkpoint_path,
              std::string report_path) {
  Timer timer;
  ensure_out_dir(opt.out_dir);
  if (checkpoint_path.empty()) checkpoint_path = opt.out_dir + "/checkpoint.json";
  if (report_path.empty()) report_path = opt.out_dir + "/train_report.json";

  Dataset data = load_dataset(opt.dataset_path);
  opt.finalize(data);

  TrainResult result = train(data, opt.model, opt.train);
  save_checkpoint(checkpoint_path, opt.model, result.params);
  {
    std::ofstream out(report_path, std::ios::binary);
    if (!out) throw ValidationError("cannot write report: " + report_path);
    out << to_json(result.report) << '\n';
  }
  if (result.report.epochs_run > 0)
    std::cout << "trained " << result.report.epochs_run << " epochs, best val AUC "
              << result.report.best_val_auc << " at epoch "
              << result.report.best_epoch << "\n";
  else
    std::cout << "epochs 0: wrote initial checkpoint\n";
  std::cout << "checkpoint -> " << checkpoint_path << "\n";

  write_manifest(opt.out_dir, "train", opt.train.seed,
                 json{{"model", model_config_json(opt.model)},
                      {"train", train_config_json(opt.train)}},
                 json{{"dataset", opt.dataset_path}},
                 json{{"checkpoint", checkpoint_path}, {"report", report_path}},
                 timer.seconds());
  return 0;
}

int run_eval(const std::string& dataset_path, const std::string& ckpt_path,
             const std::string& out_dir, std::uint64_t seed) {
  Timer timer;
  ensure_out_dir(out_dir);
  auto [cfg, params] = load_checkpoint(ckpt_path);
  Dataset data = load_dataset(dataset_path);
  if (data.empty()) throw ValidationError("empty dataset");
  const auto data_a = static_cast<std::size_t>(data[0].rois[0].embedding.size());
  if (data_a != cfg.a)
    throw ValidationError("embedding dimension mismatch: checkpoint expects a=" +
                          std::to_string(cfg.a) + ", dataset has a=" +
                          std::to_string(data_a));

  MetricReport report = compute_metrics(score_dataset(data, params, cfg));
  const std::string text = to_json(report);
  std::cout << text << "\n";
  const std::string metrics_path = out_dir + "/metrics.json";
  {
    std::ofstream out(metrics_path, std::ios::binary);
    if (!out) throw ValidationError("cannot write metrics: " + metrics_path);
    out << text << '\n';
  }
  write_manifest(out_dir, "eval", seed, model_config_json(cfg),
                 json{{"dataset", dataset_path}, {"checkpoint", ckpt_path}},
                 json{{"metrics", metrics_path}}, timer.seconds());
  return 0;
}

struct VariantSpec {
  std::string name;
  ModelConfig model;
  TrainConfig train;
};

VariantSpec make_variant(const std::string& name, const FitOptions& base) {
  VariantSpec v{name, base.model, base.train};
  if (name == "pool") {
    v.model.L = 0;
    v.model.readout = Readout::maxpool_raw;
    v.model.use_rope = false;
    v.train.lambda_rep = 0.0;
  } else if (name == "anchor") {
    v.model.readout = Readout::anchor;
    v.model.use_rope = false;
    v.train.lambda_rep = 0.0;
  } else if (name == "anchor-rope") {
    v.model.readout = Readout::anchor;
    v.model.use_rope = true;
    v.train.lambda_rep = 0.0;
  } else if (name == "anchor-rope-rcl") {
    v.model.readout = Readout::anchor;
    v.model.use_rope = true;
    // keeps the base lambda_rep
  } else {
    throw ValidationError("unknown variant: " + name);
  }
  return v;
}

int run_ablate(FitOptions& opt, const std::vector<std::string>& variants,
               const std::string& test_path) {
  Timer timer;
  ensure_out_dir(opt.out_dir);
  Dataset data = load_dataset(opt.dataset_path);
  opt.finalize(data);
  Dataset test;
  if (!test_path.empty()) test = load_dataset(test_path);

  json rows = json::array();
  bool any_failed = false;
  std::printf("%-18s %-10s %-10s %-8s %-8s %-8s %-8s\n", "variant", "val_auc",
              "test_auc", "f1", "r@0.1", "r@0.3", "r@0.5");
  for (const auto& name : variants) {
    try {
      VariantSpec v = make_variant(name, opt);
      TrainResult result = train(data, v.model, v.train);
      save_checkpoint(opt.out_dir + "/ckpt_" + name + ".json", v.model,
                      result.params);
      json row{{"variant", name},
               {"val_auc", result.report.best_val_auc},
               {"best_epoch", result.report.best_epoch},
               {"epochs_run", result.report.epochs_run}};
      if (!test.empty()) {
        MetricReport m = compute_metrics(score_dataset(test, result.params,
                                                       v.model));
        row["test"] = json::parse(to_json(m));
        std::printf("%-18s %-10.4f %-10.4f %-8.4f %-8.4f %-8.4f %-8.4f\n",
                    name.c_str(), result.report.best_val_auc, m.auc, m.f1,
                    m.r_at_01, m.r_at_03, m.r_at_05);
      } else {
        std::printf("%-18s %-10.4f %-10s %-8s %-8s %-8s %-8s\n", name.c_str(),
                    result.report.best_val_auc, "-", "-", "-", "-", "-");
      }
      rows.push_back(row);
    } catch (const std::exception& e) {
      any_failed = true;
      rows.push_back(json{{"variant", name}, {"error", e.what()}});
      std::printf("%-18s FAILED: %s\n", name.c_str(), e.what());
    }
  }

  const std::string table_path = opt.out_dir + "/ablation.json";
  {
    std::ofstream out(table_path, std::ios::binary);
    if (!out) throw ValidationError("cannot write table: " + table_path);
    out << json{{"rows", rows}}.dump(2) << '\n';
  }
  write_manifest(opt.out_dir, "ablate", opt.train.seed,
                 json{{"model", model_config_json(opt.model)},
                      {"train", train_config_json(opt.train)},
                      {"variants", variants}},
                 json{{"dataset", opt.dataset_path}, {"test", test_path}},
                 json{{"table", table_path}}, timer.seconds());
  return any_failed ? 2 : 0;
}

int run_gradcheck(ModelConfig model_cfg, const std::string& readout_name,
                  double lambda_rep, std::size_t k, std::uint64_t base_seed,
                  std::size_t seeds, const std::string& fault,
                  const std::string& out_dir) {
  Timer timer;
  ensure_out_dir(out_dir);
  model_cfg.readout = parse_readout(readout_name);
  validate(model_cfg);
  bool fault_inject = false;
  if (!fault.empty()) {
    if (fault != "sign-flip")
      throw ValidationError("unknown fault mode: " + fault);
    fault_inject = true;
  }
  LossConfig lcfg;
  lcfg.lambda_rep = lambda_rep;

  bool all_pass = true;
  json reports = json::array();
  for (std::size_t i = 0; i < seeds; ++i) {
    const std::uint64_t seed = base_seed + i;
    GradCheckReport r = gradcheck(model_cfg, lcfg, k, seed, fault_inject);
    const bool pass = r.max_rel_err < kGradCheckThreshold;
    all_pass = all_pass && pass;
    json jr{{"seed", seed},
            {"max_rel_err", r.max_rel_err},
            {"worst_param", r.worst_param},
            {"analytic", r.analytic},
            {"numeric", r.numeric},
            {"pass", pass}};
    reports.push_back(jr);
    std::cout << jr.dump() << "\n";
  }
  write_manifest(out_dir, "gradcheck", base_seed,
                 json{{"model", model_config_json(model_cfg)},
                      {"lambda_rep", lambda_rep},
                      {"k", k},
                      {"seeds", seeds},
                      {"fault", fault},
                      {"threshold", kGradCheckThreshold}},
                 json::object(), json{{"reports", reports}}, timer.seconds());
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RoI attention classification head"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "config file (TOML, one [subcommand] section per command)");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->fallthrough();
  SynthConfig synth_cfg;
  std::string synth_out, synth_dir = ".";
  synth->add_option("--n", synth_cfg.n, "number of images");
  synth->add_option("--k", synth_cfg.k, "RoIs per image");
  synth->add_option("--a", synth_cfg.a, "embedding dim");
  synth->add_option("--mu", synth_cfg.signal_strength, "planted signal strength");
  synth->add_option("--sigma", synth_cfg.noise_std, "noise std");
  synth->add_option("--positive-rate", synth_cfg.positive_rate,
                    "P(label = 1)");
  synth->add_option("--seed", synth_cfg.seed, "generator seed");
  synth->add_option("-o,--out", synth_out, "output JSONL path");
  synth->add_option("--out-dir", synth_dir, "output directory");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->fallthrough();
  FitOptions train_opt;
  std::string ckpt_out, report_out;
  train_opt.add_to(train_cmd, true);
  train_cmd->add_option("--checkpoint-out", ckpt_out, "checkpoint path");
  train_cmd->add_option("--report-out", report_out, "train report path");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->fallthrough();
  std::string eval_data, eval_ckpt, eval_dir = ".";
  std::uint64_t eval_seed = 0;
  eval_cmd->add_option("dataset", eval_data, "dataset (JSONL)")->required();
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint path")
      ->required();
  eval_cmd->add_option("--out-dir", eval_dir, "output directory");
  eval_cmd->add_option("--seed", eval_seed, "recorded in the manifest");

  // ablate
  auto* ablate_cmd =
      app.add_subcommand("ablate", "train and compare model variants");
  ablate_cmd->fallthrough();
  FitOptions ablate_opt;
  std::vector<std::string> variants{"pool", "anchor", "anchor-rope",
                                    "anchor-rope-rcl"};
  std::string ablate_test;
  ablate_opt.add_to(ablate_cmd, false);
  ablate_cmd->add_option("--variants", variants, "variants to run")
      ->delimiter(',');
  ablate_cmd->add_option("--test", ablate_test, "held-out dataset (JSONL)");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gc->fallthrough();
  ModelConfig gc_cfg;
  gc_cfg.a = 16;
  gc_cfg.d = 16;
  gc_cfg.H = 2;
  gc_cfg.L = 1;
  std::string gc_readout = "anchor", gc_fault, gc_dir = ".";
  std::size_t gc_k = 4, gc_seeds = 3;
  std::uint64_t gc_seed = 0;
  double gc_lambda = 0.1;
  gc->add_option("--a", gc_cfg.a, "embedding dim");
  gc->add_option("--d", gc_cfg.d, "model dim");
  gc->add_option("--heads", gc_cfg.H, "attention heads");
  gc->add_option("--depth", gc_cfg.L, "transformer blocks");
  gc->add_option("--readout", gc_readout, "readout mode");
  gc->add_option("--k", gc_k, "RoIs in the probe record");
  gc->add_option("--lambda-rep", gc_lambda, "repulsive loss weight");
  gc->add_option("--seeds", gc_seeds, "number of seeds");
  gc->add_option("--seed", gc_seed, "base seed");
  gc->add_option("--fault-inject", gc_fault, "test-only: sign-flip");
  gc->add_option("--out-dir", gc_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return run_synth(synth_cfg, synth_out, synth_dir);
    if (train_cmd->parsed()) return run_train(train_opt, ckpt_out, report_out);
    if (eval_cmd->parsed())
      return run_eval(eval_data, eval_ckpt, eval_dir, eval_seed);
    if (ablate_cmd->parsed())
      return run_ablate(ablate_opt, variants, ablate_test);
    if (gc->parsed())
      return run_gradcheck(gc_cfg, gc_readout, gc_lambda, gc_k, gc_seed,
                           gc_seeds, gc_fault, gc_dir);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
