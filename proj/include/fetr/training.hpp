// Copyright (c) 2026 the fetr authors
// SPDX-License-Identifier: Apache-2.0
//
// Loss, optimizers, LR schedule, augmentation, and the epoch loop.

#ifndef FETR_TRAINING_HPP
#define FETR_TRAINING_HPP

#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "fetr/backbone.hpp"
#include "fetr/data.hpp"
#include "fetr/metrics.hpp"

namespace fetr {

enum class OptimizerKind : uint8_t { kAdam = 0, kSgd = 1 };

struct TrainConfig {
  int epochs = 100;
  int batch_size = 48;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double base_lr = 1e-4;
  double weight_decay = 1e-5;
  int warmup_epochs = 0;
  std::string lr_schedule = "cosine";
  uint64_t seed = 0;
  bool augment = true;

  void validate() const {
    if (base_lr <= 0) throw ConfigError("train: lr must be > 0");
    if (warmup_epochs < 0) throw ConfigError("train: warmup_epochs must be >= 0");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2 (batch norm)");
    if (lr_schedule != "cosine") throw ConfigError("train: unknown lr schedule '" + lr_schedule + "'");
  }
};

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Mean softmax cross-entropy over the batch, stabilized via log-sum-exp.
template <typename T>
Tensor<T> cross_entropy_loss(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy_loss: logits must be [B,K]");
  const int64_t B = logits.dim(0), K = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != B)
    throw ShapeError("cross_entropy_loss: label count mismatch");
  const T* p = logits.data();
  std::vector<T> probs(logits.vec().size());
  T loss = T(0);
  for (int64_t b = 0; b < B; ++b) {
    const int y = labels[static_cast<size_t>(b)];
    if (y < 0 || y >= K)
      throw DataError("cross_entropy_loss: label " + std::to_string(y) + " out of range [0," +
                      std::to_string(K) + ") at row " + std::to_string(b));
    const T* row = p + b * K;
    T mx = row[0];
    for (int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    T sum = T(0);
    for (int64_t k = 0; k < K; ++k) {
      const T e = std::exp(row[k] - mx);
      probs[static_cast<size_t>(b * K + k)] = e;
      sum += e;
    }
    for (int64_t k = 0; k < K; ++k) probs[static_cast<size_t>(b * K + k)] /= sum;
    loss += std::log(sum) + mx - row[y];
  }
  loss /= static_cast<T>(B);

  auto li = logits.impl();
  std::vector<int> ys = labels;
  return make_op<T>("cross_entropy", {1}, {loss}, {logits},
                    [li, B, K, probs = std::move(probs), ys = std::move(ys)](const std::vector<T>& g) {
                      if (!li->requires_grad) return;
                      li->ensure_grad();
                      const T scale = g[0] / static_cast<T>(B);
                      for (int64_t b = 0; b < B; ++b)
                        for (int64_t k = 0; k < K; ++k) {
                          const size_t u = static_cast<size_t>(b * K + k);
                          T d = probs[u];
                          if (k == ys[static_cast<size_t>(b)]) d -= T(1);
                          li->grad[u] += scale * d;
                        }
                    });
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

template <typename T>
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::kAdam;
  int64_t step = 0;
  // Parallel to the registry's params: Adam first/second moments, or the SGD
  // momentum buffer in `m` alone.
  std::vector<std::vector<T>> m, v;

  static OptimizerState init(const ParamRegistry<T>& reg, OptimizerKind kind) {
    OptimizerState s;
    s.kind = kind;
    for (const auto& p : reg.params) {
      s.m.emplace_back(p.tensor.numel(), T(0));
      if (kind == OptimizerKind::kAdam) s.v.emplace_back(p.tensor.numel(), T(0));
    }
    return s;
  }
};

/// One update. Adam uses (0.9, 0.999, 1e-8) with bias correction and
/// decoupled weight decay; SGD uses momentum 0.9. Weight decay only touches
/// parameters flagged for decay at registration. A NaN gradient aborts with
/// the parameter's name.
template <typename T>
void optimizer_step(ParamRegistry<T>& reg, OptimizerState<T>& state, const TrainConfig& cfg, double lr) {
  constexpr T kBeta1 = T(0.9), kBeta2 = T(0.999), kEps = T(1e-8);
  ++state.step;
  for (size_t pi = 0; pi < reg.params.size(); ++pi) {
    auto& entry = reg.params[pi];
    if (!entry.tensor.has_grad())
      throw ContractError("optimizer_step: parameter '" + entry.name + "' has no gradient");
    const std::vector<T>& g = entry.tensor.grad_vec();
    for (T gv : g)
      if (std::isnan(gv) || std::isinf(gv))
        throw NanGradError("optimizer_step: non-finite gradient in parameter '" + entry.name +
                           "' at step " + std::to_string(state.step));
    T* w = entry.tensor.data();
    const T lrt = static_cast<T>(lr);
    const T wd = entry.decay ? static_cast<T>(cfg.weight_decay) : T(0);
    if (state.kind == OptimizerKind::kAdam) {
      std::vector<T>& m = state.m[pi];
      std::vector<T>& v = state.v[pi];
      const T bc1 = T(1) - std::pow(kBeta1, static_cast<T>(state.step));
      const T bc2 = T(1) - std::pow(kBeta2, static_cast<T>(state.step));
      for (size_t i = 0; i < g.size(); ++i) {
        m[i] = kBeta1 * m[i] + (T(1) - kBeta1) * g[i];
        v[i] = kBeta2 * v[i] + (T(1) - kBeta2) * g[i] * g[i];
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        w[i] -= lrt * (mhat / (std::sqrt(vhat) + kEps) + wd * w[i]);
      }
    } else {
      std::vector<T>& mom = state.m[pi];
      for (size_t i = 0; i < g.size(); ++i) {
        mom[i] = T(0.9) * mom[i] + g[i] + wd * w[i];
        w[i] -= lrt * mom[i];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Learning-rate schedule: linear warmup base/100 -> base, then cosine decay
// base -> base/1000.
// ---------------------------------------------------------------------------

inline double lr_at(int64_t step, int64_t total_steps, const TrainConfig& cfg, int64_t steps_per_epoch) {
  if (step < 0 || step > total_steps) throw ContractError("lr_at: step out of range");
  const double base = cfg.base_lr;
  const int64_t warmup = static_cast<int64_t>(cfg.warmup_epochs) * steps_per_epoch;
  if (warmup > 0 && step < warmup) {
    const double start = base / 100.0;
    return start + (base - start) * static_cast<double>(step) / static_cast<double>(warmup);
  }
  const double end = base / 1000.0;
  if (total_steps <= warmup) return base;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return end + 0.5 * (base - end) * (1.0 + std::cos(M_PI * progress));
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

enum class AugmentMode { kTrain, kEval };

namespace detail {

inline Image resize_bilinear(const Image& src, int nh, int nw) {
  Image dst;
  dst.h = nh;
  dst.w = nw;
  dst.rgb.resize(static_cast<size_t>(3) * nh * nw);
  const double sy = static_cast<double>(src.h) / nh;
  const double sx = static_cast<double>(src.w) / nw;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < nh; ++y) {
      double fy = (y + 0.5) * sy - 0.5;
      fy = std::min(std::max(fy, 0.0), static_cast<double>(src.h - 1));
      const int y0 = static_cast<int>(fy);
      const int y1 = std::min(y0 + 1, src.h - 1);
      const double wy = fy - y0;
      for (int x = 0; x < nw; ++x) {
        double fx = (x + 0.5) * sx - 0.5;
        fx = std::min(std::max(fx, 0.0), static_cast<double>(src.w - 1));
        const int x0 = static_cast<int>(fx);
        const int x1 = std::min(x0 + 1, src.w - 1);
        const double wx = fx - x0;
        const double top = src.at(c, y0, x0) * (1.0 - wx) + src.at(c, y0, x1) * wx;
        const double bot = src.at(c, y1, x0) * (1.0 - wx) + src.at(c, y1, x1) * wx;
        dst.at(c, y, x) = static_cast<float>(top * (1.0 - wy) + bot * wy);
      }
    }
  return dst;
}

inline Image crop(const Image& src, int y0, int x0, int ch, int cw) {
  Image dst;
  dst.h = ch;
  dst.w = cw;
  dst.rgb.resize(static_cast<size_t>(3) * ch * cw);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x) dst.at(c, y, x) = src.at(c, y0 + y, x0 + x);
  return dst;
}

inline Image hflip(const Image& src) {
  Image dst = src;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < src.h; ++y)
      for (int x = 0; x < src.w; ++x) dst.at(c, y, x) = src.at(c, y, src.w - 1 - x);
  return dst;
}

}  // namespace detail

/// Train mode: random resized crop (area scale 0.7-1.0, aspect 3/4-4/3) plus
/// p=0.5 horizontal flip. Eval mode: deterministic resize (shorter side to
/// target*8/7) and center crop. Output is always target x target.
inline Image augment_sample(const Image& img, AugmentMode mode, int target, Rng& rng) {
  if (img.h < 1 || img.w < 1) throw DataError("augment_sample: degenerate image extents");
  if (mode == AugmentMode::kTrain) {
    const double area = static_cast<double>(img.h) * img.w;
    int ch = img.h, cw = img.w;
    for (int attempt = 0; attempt < 10; ++attempt) {
      const double frac = rng.uniform(0.7, 1.0);
      const double aspect = rng.uniform(0.75, 4.0 / 3.0);
      const int th = static_cast<int>(std::lround(std::sqrt(area * frac / aspect)));
      const int tw = static_cast<int>(std::lround(std::sqrt(area * frac * aspect)));
      if (th >= 1 && tw >= 1 && th <= img.h && tw <= img.w) {
        ch = th;
        cw = tw;
        break;
      }
    }
    const int y0 = ch < img.h ? static_cast<int>(rng.uniform_int(img.h - ch + 1)) : 0;
    const int x0 = cw < img.w ? static_cast<int>(rng.uniform_int(img.w - cw + 1)) : 0;
    Image out = detail::resize_bilinear(detail::crop(img, y0, x0, ch, cw), target, target);
    if (rng.uniform() < 0.5) out = detail::hflip(out);
    return out;
  }
  // Eval path: no randomness.
  const int short_side = std::min(img.h, img.w);
  const double scale = static_cast<double>(target) * 8.0 / 7.0 / short_side;
  const int nh = std::max(target, static_cast<int>(std::lround(img.h * scale)));
  const int nw = std::max(target, static_cast<int>(std::lround(img.w * scale)));
  Image resized = detail::resize_bilinear(img, nh, nw);
  const int y0 = (nh - target) / 2;
  const int x0 = (nw - target) / 2;
  return detail::crop(resized, y0, x0, target, target);
}

// ---------------------------------------------------------------------------
// Epoch loop
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> assemble_batch(const std::vector<Image>& images) {
  const int64_t B = static_cast<int64_t>(images.size());
  const int64_t H = images[0].h, W = images[0].w;
  std::vector<T> data(static_cast<size_t>(B * 3 * H * W));
  for (int64_t b = 0; b < B; ++b) {
    const auto& img = images[static_cast<size_t>(b)];
    for (size_t i = 0; i < img.rgb.size(); ++i)
      data[static_cast<size_t>(b) * img.rgb.size() + i] = static_cast<T>(img.rgb[i]);
  }
  return Tensor<T>::from({B, 3, H, W}, std::move(data));
}

struct EpochStats {
  double mean_loss = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
  int64_t samples = 0;
};

/// One pass over the data in seeded-shuffled order: augment, forward, loss,
/// backward, optimizer step. The per-epoch RNG is derived from
/// (seed, epoch), so resuming at an epoch boundary replays exactly.
template <typename T>
EpochStats train_epoch(Network<T>& net, ParamRegistry<T>& reg, const std::vector<LabeledImage>& data,
                       const TrainConfig& cfg, OptimizerState<T>& opt, int epoch, int64_t total_steps,
                       int64_t steps_per_epoch) {
  if (data.empty()) throw DataError("train_epoch: empty dataset");
  Rng rng(mix_seed(cfg.seed, 0xe90c0000ull + static_cast<uint64_t>(epoch)));
  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  const int target = net.spec.input_h;
  EpochStats stats;
  double loss_sum = 0.0;
  double top1_sum = 0.0, top5_sum = 0.0;

  size_t pos = 0;
  while (pos < order.size()) {
    const size_t bsz = std::min<size_t>(static_cast<size_t>(cfg.batch_size), order.size() - pos);
    // Trailing singleton batches are dropped (spatial batch norms may need
    // more than one sample); a one-sample dataset still trains as-is.
    if (bsz < 2 && order.size() >= 2) break;
    std::vector<Image> images(bsz);
    std::vector<int> labels(bsz);
    for (size_t i = 0; i < bsz; ++i) {
      const LabeledImage& s = data[order[pos + i]];
      images[i] = cfg.augment ? augment_sample(s.image, AugmentMode::kTrain, target, rng)
                              : augment_sample(s.image, AugmentMode::kEval, target, rng);
      labels[i] = s.label;
    }
    pos += bsz;

    Tensor<T> x = assemble_batch<T>(images);
    Tensor<T> logits = net.forward(x, /*train=*/true);
    Tensor<T> loss = cross_entropy_loss(logits, labels);
    reg.zero_grad();
    loss.backward();
    const double lr = lr_at(opt.step, total_steps, cfg, steps_per_epoch);
    optimizer_step(reg, opt, cfg, lr);

    const double n = static_cast<double>(bsz);
    loss_sum += static_cast<double>(loss.item()) * n;
    top1_sum += topk_accuracy(logits, labels, 1) * n;
    top5_sum += topk_accuracy(logits, labels, std::min<int>(5, net.spec.num_classes)) * n;
    stats.samples += static_cast<int64_t>(bsz);
  }
  if (stats.samples == 0) throw DataError("train_epoch: no batch with >= 2 samples");
  stats.mean_loss = loss_sum / static_cast<double>(stats.samples);
  stats.top1 = top1_sum / static_cast<double>(stats.samples);
  stats.top5 = top5_sum / static_cast<double>(stats.samples);
  return stats;
}

/// Eval-mode logits over a whole set (batched, no grad, no state mutation).
template <typename T>
std::pair<Tensor<T>, std::vector<int>> collect_eval_logits(Network<T>& net,
                                                           const std::vector<LabeledImage>& data,
                                                           int batch_size = 48) {
  if (data.empty()) throw DataError("evaluate: empty dataset");
  NoGradGuard ng;
  Rng unused(0);
  const int target = net.spec.input_h;
  const int64_t K = net.spec.num_classes;
  std::vector<T> all_logits(data.size() * static_cast<size_t>(K));
  std::vector<int> labels(data.size());
  size_t pos = 0;
  while (pos < data.size()) {
    const size_t bsz = std::min<size_t>(static_cast<size_t>(batch_size), data.size() - pos);
    std::vector<Image> images(bsz);
    for (size_t i = 0; i < bsz; ++i) {
      images[i] = augment_sample(data[pos + i].image, AugmentMode::kEval, target, unused);
      labels[pos + i] = data[pos + i].label;
    }
    Tensor<T> logits = net.forward(assemble_batch<T>(images), /*train=*/false);
    std::copy(logits.vec().begin(), logits.vec().end(),
              all_logits.begin() + static_cast<long>(pos * static_cast<size_t>(K)));
    pos += bsz;
  }
  return {Tensor<T>::from({static_cast<int64_t>(data.size()), K}, std::move(all_logits)), labels};
}

/// Eval-mode pass over the whole set; no state is mutated.
template <typename T>
RunMetrics evaluate(Network<T>& net, const std::vector<LabeledImage>& data, int batch_size = 48) {
  auto [logits, labels] = collect_eval_logits(net, data, batch_size);
  return compute_run_metrics(logits, labels, net.spec.num_classes);
}

}  // namespace fetr

#endif  // FETR_TRAINING_HPP
