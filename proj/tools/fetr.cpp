// Copyright (c) 2026 the fetr authors
// SPDX-License-Identifier: Apache-2.0
//
// fetr: train / eval / bench / synth for the FE-TResNet classifier.
//
// Exit codes: 0 success, 1 generic error, 2 data error (missing/bad
// dataset), 3 checkpoint/dataset class mismatch, 4 bad checkpoint file,
// 5 config error.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "fetr/bench.hpp"
#include "fetr/session.hpp"

namespace {

using namespace fetr;

struct FlagOverrides {
  // CLI flag storage; only values the user actually set are applied, so the
  // precedence is flag > file > default for every key.
  std::map<std::string, std::string> model, train, data;
};

void add_override_flag(CLI::App* cmd, std::map<std::string, std::string>& store,
                       const std::string& section, const std::string& key, const std::string& flag,
                       const std::string& help) {
  cmd->add_option_function<std::string>(
         flag, [&store, key](const std::string& v) { store[key] = v; }, help)
      ->group("config overrides (" + section + ")");
}

void apply_overrides(Config& cfg, const FlagOverrides& ov) {
  for (const auto& [k, v] : ov.model) apply_config_value(cfg, "model", k, v, 0);
  for (const auto& [k, v] : ov.train) apply_config_value(cfg, "train", k, v, 0);
  for (const auto& [k, v] : ov.data) apply_config_value(cfg, "data", k, v, 0);
}

std::vector<int> parse_int_csv(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fetr: feature-enhanced TResNet trainer and tools"};
  app.require_subcommand(1);

  std::string config_path;
  uint64_t seed = 0;
  bool seed_set = false;
  bool quiet = false;
  app.add_option("--config", config_path, "INI config file")->expected(1);
  app.add_option_function<uint64_t>(
      "--seed", [&](uint64_t v) { seed = v; seed_set = true; }, "master RNG seed");
  app.add_flag("--quiet", quiet, "suppress informational stderr output");

  // --- train ---
  auto* train_cmd = app.add_subcommand("train", "train a classifier");
  std::string data_dir, out_dir, resume_path;
  int save_every = 1;
  FlagOverrides ov;
  train_cmd->add_option("--data", data_dir, "dataset root (folder per class)")->required();
  train_cmd->add_option("--out", out_dir, "checkpoint output directory");
  train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");
  train_cmd->add_option("--save-every", save_every, "epochs between last.fetr writes");
  add_override_flag(train_cmd, ov.train, "train", "epochs", "--epochs", "training epochs");
  add_override_flag(train_cmd, ov.train, "train", "batch_size", "--batch-size", "mini-batch size");
  add_override_flag(train_cmd, ov.train, "train", "optimizer", "--optimizer", "adam or sgd");
  add_override_flag(train_cmd, ov.train, "train", "lr", "--lr", "base learning rate");
  add_override_flag(train_cmd, ov.train, "train", "weight_decay", "--weight-decay", "decoupled weight decay");
  add_override_flag(train_cmd, ov.train, "train", "warmup_epochs", "--warmup-epochs", "linear warmup epochs");
  add_override_flag(train_cmd, ov.train, "train", "augment", "--augment", "true/false train augmentation");
  add_override_flag(train_cmd, ov.model, "model", "base_width", "--base-width", "stage-1 channel count");
  add_override_flag(train_cmd, ov.model, "model", "depths", "--depths", "four comma-separated stage depths");
  add_override_flag(train_cmd, ov.model, "model", "dca_stages", "--dca-stages", "stages carrying DCA");
  add_override_flag(train_cmd, ov.model, "model", "se_reduction", "--se-reduction", "SE bottleneck ratio");
  add_override_flag(train_cmd, ov.model, "model", "input_size", "--input-size", "square input extent");
  add_override_flag(train_cmd, ov.model, "model", "stylerm", "--stylerm", "true/false StyleRM in basic blocks");
  add_override_flag(train_cmd, ov.data, "data", "split_ratio", "--split-ratio", "train fraction per class");

  // --- eval ---
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ckpt_path, eval_split = "auto", per_class_csv, topk_str = "1,5";
  double eval_ratio = -1.0;
  eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  eval_cmd->add_option("--data", data_dir, "dataset root")->required();
  eval_cmd->add_option("--split", eval_split, "auto|val|train|all (auto = checkpoint's val split)");
  eval_cmd->add_option("--ratio", eval_ratio, "split ratio override");
  eval_cmd->add_option("--topk", topk_str, "comma list of k values to report");
  eval_cmd->add_option("--per-class", per_class_csv, "write per-class CSV here");

  // --- bench ---
  auto* bench_cmd = app.add_subcommand("bench", "criss-cross vs non-local complexity benchmark");
  std::string sizes_str = "8,16,32,64";
  int channels = 32, repeats = 5;
  std::string bench_out;
  bench_cmd->add_option("--sizes", sizes_str, "comma list of square map extents");
  bench_cmd->add_option("--channels", channels, "input channels");
  bench_cmd->add_option("--repeats", repeats, "timing repeats (median reported)");
  bench_cmd->add_option("--out", bench_out, "CSV output path (default stdout)");

  // --- synth ---
  auto* synth_cmd = app.add_subcommand("synth", "generate the synthetic texture dataset");
  int classes = 10, per_class = 50, size = 32;
  std::string synth_out;
  synth_cmd->add_option("--classes", classes, "number of classes");
  synth_cmd->add_option("--per-class", per_class, "samples per class");
  synth_cmd->add_option("--size", size, "square image extent");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) {
      if (!std::filesystem::is_directory(data_dir)) {
        std::cerr << "error: data directory not found: " << data_dir << "\n";
        return 2;
      }
      TrainSessionOptions opts;
      opts.cfg = config_path.empty() ? default_config() : parse_config(config_path);
      opts.cfg.model.num_classes = 0;  // resolved from the dataset
      apply_overrides(opts.cfg, ov);
      opts.cfg.data.root = data_dir;
      if (seed_set) opts.cfg.train.seed = seed;
      opts.out_dir = out_dir;
      opts.save_every = std::max(1, save_every);
      opts.resume_path = resume_path;
      run_train_session(opts, std::cout);
      return 0;
    }
    if (eval_cmd->parsed()) {
      EvalSessionOptions opts;
      opts.checkpoint_path = ckpt_path;
      opts.data_root = data_dir;
      opts.split = eval_split;
      opts.split_ratio = eval_ratio;
      if (seed_set) opts.seed = seed;
      opts.topk = parse_int_csv(topk_str);
      opts.per_class_csv = per_class_csv;
      run_eval_session(opts, std::cout);
      return 0;
    }
    if (bench_cmd->parsed()) {
      const auto reports = run_bench(parse_int_csv(sizes_str), channels, repeats);
      if (bench_out.empty()) {
        write_bench_csv(std::cout, reports);
      } else {
        std::ofstream out(bench_out);
        if (!out) throw DataError("cannot write " + bench_out);
        write_bench_csv(out, reports);
      }
      return 0;
    }
    if (synth_cmd->parsed()) {
      const DatasetManifest m = generate_synthetic(synth_out, classes, per_class, size, seed);
      if (!quiet)
        std::cerr << "wrote " << m.total_samples() << " samples in " << m.class_names.size()
                  << " classes to " << synth_out << " (hash " << m.content_hash << ")\n";
      std::cout << m.content_hash << "\n";
      return 0;
    }
  } catch (const SpecMismatchError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
