// Copyright (c) 2026 the fetr authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-class evaluation: confusion matrix, one-vs-rest precision/recall/F1
// with macro averaging, and top-k accuracy.

#ifndef FETR_METRICS_HPP
#define FETR_METRICS_HPP

#include <iosfwd>
#include <string>
#include <vector>

#include "fetr/tensor.hpp"

namespace fetr {

struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<int64_t> counts;  // rows = true class, cols = predicted

  int64_t at(int true_class, int pred_class) const {
    return counts[static_cast<size_t>(true_class * num_classes + pred_class)];
  }
  int64_t tp(int k) const { return at(k, k); }
  int64_t fp(int k) const;  // column sum minus tp
  int64_t fn(int k) const;  // row sum minus tp
  int64_t tn(int k) const { return total() - tp(k) - fp(k) - fn(k); }
  int64_t total() const;
};

ConfusionMatrix confusion_matrix(const std::vector<int>& preds, const std::vector<int>& labels, int num_classes);

struct ClassMetrics {
  int64_t tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct PrfMetrics {
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
};

/// One-vs-rest per class. Classes with an empty denominator contribute 0 to
/// the macro mean (the mean is always over all K classes).
PrfMetrics precision_recall_f1(const ConfusionMatrix& cm);

/// Argmax with ties broken toward the lower class index.
template <typename T>
int argmax_row(const T* row, int n) {
  int best = 0;
  for (int j = 1; j < n; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

/// Fraction of samples whose label ranks among the k largest logits
/// (ties broken toward lower class indices).
template <typename T>
double topk_accuracy(const Tensor<T>& logits, const std::vector<int>& labels, int k) {
  if (logits.rank() != 2) throw ShapeError("topk_accuracy: logits must be [B,K]");
  const int64_t B = logits.dim(0), K = logits.dim(1);
  if (k < 1 || k > K) throw ContractError("topk_accuracy: k must lie in [1, K]");
  if (static_cast<int64_t>(labels.size()) != B) throw ShapeError("topk_accuracy: label count mismatch");
  int64_t hits = 0;
  const T* p = logits.data();
  for (int64_t b = 0; b < B; ++b) {
    const int label = labels[static_cast<size_t>(b)];
    if (label < 0 || label >= K) throw DataError("topk_accuracy: label out of range");
    const T* row = p + b * K;
    const T lv = row[label];
    // Number of classes ranked strictly ahead of the label.
    int ahead = 0;
    for (int64_t j = 0; j < K; ++j)
      if (row[j] > lv || (row[j] == lv && j < label)) ++ahead;
    if (ahead < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(B);
}

struct RunMetrics {
  double top1 = 0.0, top5 = 0.0;
  double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
  int64_t sample_count = 0;
  std::vector<ClassMetrics> per_class;

  std::string to_json() const;
  /// CSV rows "class,tp,fp,fn,precision,recall,f1".
  void write_per_class_csv(std::ostream& os) const;
};

template <typename T>
RunMetrics compute_run_metrics(const Tensor<T>& logits, const std::vector<int>& labels, int num_classes) {
  const int64_t B = logits.dim(0);
  std::vector<int> preds(static_cast<size_t>(B));
  for (int64_t b = 0; b < B; ++b)
    preds[static_cast<size_t>(b)] = argmax_row(logits.data() + b * num_classes, num_classes);
  ConfusionMatrix cm = confusion_matrix(preds, labels, num_classes);
  PrfMetrics prf = precision_recall_f1(cm);
  RunMetrics rm;
  rm.sample_count = B;
  rm.top1 = topk_accuracy(logits, labels, 1);
  rm.top5 = topk_accuracy(logits, labels, std::min<int>(5, num_classes));
  rm.macro_precision = prf.macro_precision;
  rm.macro_recall = prf.macro_recall;
  rm.macro_f1 = prf.macro_f1;
  rm.per_class = std::move(prf.per_class);
  return rm;
}

}  // namespace fetr

#endif  // FETR_METRICS_HPP
