// Copyright (c) 2026 the fetr authors
// SPDX-License-Identifier: Apache-2.0

#include "fetr/session.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <ostream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace fetr {

namespace {

int64_t count_steps_per_epoch(size_t n_train, int batch_size) {
  if (n_train == 1) return 1;  // single-sample sets still take one step
  const int64_t full = static_cast<int64_t>(n_train) / batch_size;
  const int64_t rem = static_cast<int64_t>(n_train) % batch_size;
  return full + (rem >= 2 ? 1 : 0);
}

}  // namespace

TrainSessionResult run_train_session(const TrainSessionOptions& opts, std::ostream& metrics_out) {
  Config cfg = opts.cfg;

  DatasetManifest manifest = load_image_folder(cfg.data.root);
  const int n_classes = static_cast<int>(manifest.class_names.size());
  if (cfg.model.num_classes == 0) {
    cfg.model.num_classes = n_classes;
  } else if (cfg.model.num_classes != n_classes) {
    throw SpecMismatchError("config expects " + std::to_string(cfg.model.num_classes) +
                            " classes but dataset has " + std::to_string(n_classes));
  }

  CheckpointMeta meta;
  if (!opts.resume_path.empty()) {
    meta = peek_checkpoint(opts.resume_path);
    if (meta.spec.num_classes != n_classes)
      throw SpecMismatchError("checkpoint expects " + std::to_string(meta.spec.num_classes) +
                              " classes but dataset has " + std::to_string(n_classes));
    cfg.model = meta.spec;
    cfg.train.seed = meta.seed;
    cfg.data.split_ratio = meta.split_ratio;
  }
  cfg.train.validate();
  cfg.model.validate();

  auto [train_manifest, val_manifest] = split_train_val(manifest, cfg.data.split_ratio, cfg.train.seed);
  const std::vector<LabeledImage> train_set = load_samples(train_manifest);
  const std::vector<LabeledImage> val_set = load_samples(val_manifest);

  Network<float> net = Network<float>::init(cfg.model, cfg.train.seed);
  ParamRegistry<float> reg;
  net.register_params(reg);
  OptimizerState<float> opt = OptimizerState<float>::init(reg, cfg.train.optimizer);

  int start_epoch = 0;
  double best_val = -1.0;
  if (!opts.resume_path.empty()) {
    meta = load_checkpoint(opts.resume_path, net, &opt);
    start_epoch = static_cast<int>(meta.epoch);
    best_val = meta.best_val;
  }

  const int64_t steps_per_epoch = count_steps_per_epoch(train_set.size(), cfg.train.batch_size);
  if (steps_per_epoch == 0) throw DataError("training split too small for batch size");
  const int64_t total_steps = static_cast<int64_t>(cfg.train.epochs) * steps_per_epoch;

  if (!opts.out_dir.empty()) fs::create_directories(opts.out_dir);

  TrainSessionResult result;
  for (int epoch = start_epoch; epoch < cfg.train.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(opt.step, total_steps, cfg.train, steps_per_epoch);
    EpochStats stats = train_epoch(net, reg, train_set, cfg.train, opt, epoch, total_steps, steps_per_epoch);
    RunMetrics val = evaluate(net, val_set, cfg.train.batch_size);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    nlohmann::ordered_json line;
    line["epoch"] = epoch + 1;
    line["lr"] = lr;
    line["train_loss"] = stats.mean_loss;
    line["train_top1"] = stats.top1;
    line["val_top1"] = val.top1;
    line["val_top5"] = val.top5;
    line["wall_seconds"] = wall;
    metrics_out << line.dump() << "\n";
    metrics_out.flush();

    const bool improved = val.top1 > best_val;
    if (improved) best_val = val.top1;

    if (!opts.out_dir.empty()) {
      CheckpointMeta out_meta;
      out_meta.spec = cfg.model;
      out_meta.epoch = static_cast<uint32_t>(epoch + 1);
      out_meta.global_step = static_cast<uint64_t>(opt.step);
      out_meta.best_val = best_val;
      out_meta.seed = cfg.train.seed;
      out_meta.split_ratio = cfg.data.split_ratio;
      out_meta.opt_kind = cfg.train.optimizer;
      out_meta.opt_step = opt.step;
      if ((epoch + 1) % opts.save_every == 0 || epoch + 1 == cfg.train.epochs)
        save_checkpoint((fs::path(opts.out_dir) / "last.fetr").string(), net, &opt, out_meta);
      if (improved)
        save_checkpoint((fs::path(opts.out_dir) / "best.fetr").string(), net, &opt, out_meta);
    }

    result.epochs_run = epoch + 1;
    result.best_val_top1 = best_val;
    result.final_val = val;
    result.final_train_top1 = stats.top1;
  }
  return result;
}

RunMetrics run_eval_session(const EvalSessionOptions& opts, std::ostream& out) {
  CheckpointMeta meta = peek_checkpoint(opts.checkpoint_path);
  Network<float> net = Network<float>::init(meta.spec, 0);
  load_checkpoint<float>(opts.checkpoint_path, net, nullptr);

  DatasetManifest manifest = load_image_folder(opts.data_root);
  if (static_cast<int>(manifest.class_names.size()) != meta.spec.num_classes)
    throw SpecMismatchError("checkpoint expects " + std::to_string(meta.spec.num_classes) +
                            " classes but dataset has " + std::to_string(manifest.class_names.size()));

  const double ratio = opts.split_ratio > 0 ? opts.split_ratio : meta.split_ratio;
  const uint64_t seed = opts.seed.value_or(meta.seed);
  std::string split = opts.split == "auto" ? "val" : opts.split;

  std::vector<LabeledImage> samples;
  if (split == "all") {
    samples = load_samples(manifest);
  } else {
    auto [train_m, val_m] = split_train_val(manifest, ratio, seed);
    samples = load_samples(split == "train" ? train_m : val_m);
  }

  auto [logits, labels] = collect_eval_logits(net, samples, 48);
  RunMetrics rm = compute_run_metrics(logits, labels, meta.spec.num_classes);

  nlohmann::ordered_json j;
  j["samples"] = rm.sample_count;
  j["top1"] = rm.top1;
  j["top5"] = rm.top5;
  j["macro_precision"] = rm.macro_precision;
  j["macro_recall"] = rm.macro_recall;
  j["macro_f1"] = rm.macro_f1;
  nlohmann::ordered_json ks;
  for (int k : opts.topk)
    ks[std::to_string(k)] = topk_accuracy(logits, labels, k);
  j["topk"] = ks;
  out << j.dump() << "\n";

  if (!opts.per_class_csv.empty()) {
    std::ofstream csv(opts.per_class_csv);
    if (!csv) throw DataError("cannot write per-class csv: " + opts.per_class_csv);
    rm.write_per_class_csv(csv);
  }
  return rm;
}

}  // namespace fetr
