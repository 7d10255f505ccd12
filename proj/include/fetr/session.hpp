// Copyright (c) 2026 the fetr authors
// SPDX-License-Identifier: Apache-2.0
//
// Train/eval session orchestration shared by the CLI and the acceptance
// suite: dataset wiring, the JSON-lines metrics stream, checkpoint cadence,
// and resume.

#ifndef FETR_SESSION_HPP
#define FETR_SESSION_HPP

#include <iosfwd>
#include <optional>

#include "fetr/checkpoint.hpp"
#include "fetr/config.hpp"

namespace fetr {

/// Checkpoint and dataset disagree on the class count.
struct SpecMismatchError : Error {
  using Error::Error;
};

struct TrainSessionOptions {
  Config cfg;
  std::string out_dir;      // empty = no checkpoints
  int save_every = 1;       // epochs between last.fetr writes
  std::string resume_path;  // empty = fresh start
};

struct TrainSessionResult {
  int epochs_run = 0;
  double best_val_top1 = -1.0;
  RunMetrics final_val;
  double final_train_top1 = 0.0;
};

/// Runs the training protocol, emitting one JSON object per epoch on
/// `metrics_out` with keys epoch, lr, train_loss, train_top1, val_top1,
/// val_top5, wall_seconds. Everything except wall_seconds is a pure
/// function of (seed, config, data).
TrainSessionResult run_train_session(const TrainSessionOptions& opts, std::ostream& metrics_out);

struct EvalSessionOptions {
  std::string checkpoint_path;
  std::string data_root;
  std::string split = "auto";  // auto | val | train | all
  double split_ratio = -1.0;   // <0: take from checkpoint
  std::optional<uint64_t> seed;
  std::vector<int> topk{1, 5};
  std::string per_class_csv;  // empty = skip
};

RunMetrics run_eval_session(const EvalSessionOptions& opts, std::ostream& out);

}  // namespace fetr

#endif  // FETR_SESSION_HPP
