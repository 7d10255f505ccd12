// Copyright (c) 2026 the fetr authors
// SPDX-License-Identifier: Apache-2.0

#include "fetr/metrics.hpp"

#include <cstdio>
#include <ostream>

#include <json.hpp>

namespace fetr {

int64_t ConfusionMatrix::fp(int k) const {
  int64_t col = 0;
  for (int t = 0; t < num_classes; ++t) col += at(t, k);
  return col - tp(k);
}

int64_t ConfusionMatrix::fn(int k) const {
  int64_t row = 0;
  for (int p = 0; p < num_classes; ++p) row += at(k, p);
  return row - tp(k);
}

int64_t ConfusionMatrix::total() const {
  int64_t n = 0;
  for (int64_t c : counts) n += c;
  return n;
}

ConfusionMatrix confusion_matrix(const std::vector<int>& preds, const std::vector<int>& labels,
                                 int num_classes) {
  if (preds.size() != labels.size()) throw ShapeError("confusion_matrix: preds/labels length mismatch");
  ConfusionMatrix cm;
  cm.num_classes = num_classes;
  cm.counts.assign(static_cast<size_t>(num_classes) * num_classes, 0);
  for (size_t i = 0; i < preds.size(); ++i) {
    const int t = labels[i], p = preds[i];
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
      throw DataError("confusion_matrix: entry out of range at sample " + std::to_string(i));
    ++cm.counts[static_cast<size_t>(t * num_classes + p)];
  }
  return cm;
}

PrfMetrics precision_recall_f1(const ConfusionMatrix& cm) {
  PrfMetrics out;
  out.per_class.resize(static_cast<size_t>(cm.num_classes));
  double sp = 0.0, sr = 0.0, sf = 0.0;
  for (int k = 0; k < cm.num_classes; ++k) {
    ClassMetrics& c = out.per_class[static_cast<size_t>(k)];
    c.tp = cm.tp(k);
    c.fp = cm.fp(k);
    c.fn = cm.fn(k);
    c.precision = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
    c.recall = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
    c.f1 = c.precision + c.recall > 0.0 ? 2.0 * c.precision * c.recall / (c.precision + c.recall) : 0.0;
    sp += c.precision;
    sr += c.recall;
    sf += c.f1;
  }
  const double K = static_cast<double>(cm.num_classes);
  out.macro_precision = sp / K;
  out.macro_recall = sr / K;
  out.macro_f1 = sf / K;
  return out;
}

std::string RunMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["samples"] = sample_count;
  j["top1"] = top1;
  j["top5"] = top5;
  j["macro_precision"] = macro_precision;
  j["macro_recall"] = macro_recall;
  j["macro_f1"] = macro_f1;
  return j.dump();
}

void RunMetrics::write_per_class_csv(std::ostream& os) const {
  os << "class,tp,fp,fn,precision,recall,f1\n";
  char buf[128];
  for (size_t k = 0; k < per_class.size(); ++k) {
    const ClassMetrics& c = per_class[k];
    std::snprintf(buf, sizeof(buf), "%zu,%lld,%lld,%lld,%.17g,%.17g,%.17g\n", k,
                  static_cast<long long>(c.tp), static_cast<long long>(c.fp),
                  static_cast<long long>(c.fn), c.precision, c.recall, c.f1);
    os << buf;
  }
}

}  // namespace fetr
