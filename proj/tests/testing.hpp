// Copyright (c) 2026 the fetr authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared test utilities: the finite-difference gradient checker and the
// independent brute-force oracles the expected values are frozen from.
// Everything here is deliberately written as plain loops, independent of the
// library's kernel implementations.

#ifndef FETR_TESTS_TESTING_HPP
#define FETR_TESTS_TESTING_HPP

#include <cmath>
#include <functional>
#include <vector>

#include "fetr/tensor.hpp"

namespace fetr::testing {

// ---------------------------------------------------------------------------
// Finite-difference gradient checking (64-bit, central differences)
// ---------------------------------------------------------------------------

struct GradCheckOptions {
  double step = 1e-5;
  // 0 = check every coordinate; otherwise sample this many per tensor.
  int coords_per_tensor = 0;
  uint64_t coord_seed = 0x5eed;
  // Deep graphs put the two FD failure modes in tension: rounding noise in
  // the loss evaluation grows as the step shrinks, relu-kink truncation
  // grows as it widens. A mismatch caused by either shrinks at some other
  // step of the ladder, while a real autodiff bug persists at every step,
  // so failures are re-measured across the ladder and the best-conditioned
  // measurement wins.
  bool refine_on_failure = false;
  double refine_threshold = 1e-4;
};

struct GradCheckWorst {
  size_t tensor_index = 0;
  int64_t coord = 0;
  double ad = 0.0, fd = 0.0;
};

/// Max relative error between reverse-mode and central-difference gradients
/// over the given leaf tensors. `loss_fn` must rebuild the graph on every
/// call and return a scalar.
inline double gradcheck_max_rel_error(const std::function<Tensor<double>()>& loss_fn,
                                      std::vector<Tensor<double>> leaves,
                                      const GradCheckOptions& opts = {},
                                      GradCheckWorst* worst = nullptr) {
  for (auto& t : leaves) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor<double> loss = loss_fn();
  loss.backward();

  Rng rng(opts.coord_seed);
  double max_rel = 0.0;
  for (size_t ti = 0; ti < leaves.size(); ++ti) {
    auto& t = leaves[ti];
    const std::vector<double> ad = t.grad_vec();
    std::vector<int64_t> coords;
    if (opts.coords_per_tensor <= 0 || opts.coords_per_tensor >= t.numel()) {
      coords.resize(static_cast<size_t>(t.numel()));
      for (int64_t i = 0; i < t.numel(); ++i) coords[static_cast<size_t>(i)] = i;
    } else {
      for (int i = 0; i < opts.coords_per_tensor; ++i) coords.push_back(rng.uniform_int(t.numel()));
    }
    auto measure_rel = [&](double* slot, double a, double h) {
      const double v = *slot;
      *slot = v + h;
      const double lp = loss_fn().item();
      *slot = v - h;
      const double lm = loss_fn().item();
      *slot = v;
      const double fd = (lp - lm) / (2.0 * h);
      // The central-difference quotient itself carries rounding noise of
      // about (|L+|+|L-|) * eps / (2h); a discrepancy below that bound is
      // not measurable by this oracle.
      const double fd_noise = 16.0 * (std::abs(lp) + std::abs(lm)) * 2.22e-16 / (2.0 * h);
      if (std::abs(a - fd) <= fd_noise) return std::pair<double, double>{0.0, fd};
      const double denom = std::max(std::max(std::abs(a), std::abs(fd)), 1e-8);
      return std::pair<double, double>{std::abs(a - fd) / denom, fd};
    };
    for (int64_t i : coords) {
      double* slot = t.data() + i;
      const double a = ad[static_cast<size_t>(i)];
      auto [rel, fd] = measure_rel(slot, a, opts.step);
      if (opts.refine_on_failure && rel > opts.refine_threshold) {
        for (double factor : {8.0, 64.0, 1.0 / 8.0}) {
          auto [rel2, fd2] = measure_rel(slot, a, opts.step * factor);
          if (rel2 < rel) {
            rel = rel2;
            fd = fd2;
          }
          if (rel <= opts.refine_threshold) break;
        }
      }
      if (rel > max_rel) {
        max_rel = rel;
        if (worst) *worst = {ti, i, a, fd};
      }
    }
  }
  return max_rel;
}

/// Scalar loss that is sensitive to every output element: sum(out * weights)
/// with fixed pseudo-random weights.
inline Tensor<double> weighted_sum(const Tensor<double>& out, uint64_t seed = 0xfeed) {
  Rng rng(seed);
  Tensor<double> w = Tensor<double>::uniform(out.shape(), rng, 0.25, 1.75);
  return sum_all(mul(out, w));
}

// ---------------------------------------------------------------------------
// Brute-force oracles
// ---------------------------------------------------------------------------

/// Naive triple-loop matrix product.
inline std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                         int64_t m, int64_t k, int64_t n) {
  std::vector<double> out(static_cast<size_t>(m * n), 0.0);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j)
      for (int64_t kk = 0; kk < k; ++kk)
        out[static_cast<size_t>(i * n + j)] += a[static_cast<size_t>(i * k + kk)] * b[static_cast<size_t>(kk * n + j)];
  return out;
}

/// Direct 6-loop cross-correlation with zero padding.
inline std::vector<double> conv2d_oracle(const std::vector<double>& x, const std::vector<double>& w,
                                         int64_t B, int64_t C, int64_t H, int64_t W, int64_t O, int64_t k,
                                         int stride, int pad, int64_t Ho, int64_t Wo) {
  std::vector<double> out(static_cast<size_t>(B * O * Ho * Wo), 0.0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t o = 0; o < O; ++o)
      for (int64_t oh = 0; oh < Ho; ++oh)
        for (int64_t ow = 0; ow < Wo; ++ow) {
          double acc = 0.0;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t kh = 0; kh < k; ++kh)
              for (int64_t kw = 0; kw < k; ++kw) {
                const int64_t ih = oh * stride - pad + kh;
                const int64_t iw = ow * stride - pad + kw;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += x[static_cast<size_t>(((b * C + c) * H + ih) * W + iw)] *
                       w[static_cast<size_t>(((o * C + c) * k + kh) * k + kw)];
              }
          out[static_cast<size_t>(((b * O + o) * Ho + oh) * Wo + ow)] = acc;
        }
  return out;
}

/// Two-pass per-channel mean/std (population variance, eps inside the sqrt).
inline void channel_stats_oracle(const double* x, int64_t n, double* mean, double* stdev) {
  double m = 0.0;
  for (int64_t i = 0; i < n; ++i) m += x[i];
  m /= static_cast<double>(n);
  double v = 0.0;
  for (int64_t i = 0; i < n; ++i) v += (x[i] - m) * (x[i] - m);
  v /= static_cast<double>(n);
  *mean = m;
  *stdev = std::sqrt(v + 1e-5);
}

/// Dense attention restricted to a row/column mask, computed with plain
/// loops and a direct exp/normalize softmax. Q,K: [Cp,H,W]; V: [C,H,W],
/// single batch item. Returns aggregate + residual.
inline std::vector<double> masked_dense_attention_oracle(const std::vector<double>& q,
                                                         const std::vector<double>& k,
                                                         const std::vector<double>& v,
                                                         const std::vector<double>& r, int64_t Cp,
                                                         int64_t C, int64_t H, int64_t W) {
  const int64_t P = H * W;
  std::vector<double> out(static_cast<size_t>(C * P), 0.0);
  for (int64_t uh = 0; uh < H; ++uh)
    for (int64_t uw = 0; uw < W; ++uw) {
      std::vector<double> scores;
      std::vector<int64_t> pos;
      for (int64_t jh = 0; jh < H; ++jh)
        for (int64_t jw = 0; jw < W; ++jw) {
          if (jh != uh && jw != uw) continue;  // criss-cross mask
          double s = 0.0;
          for (int64_t c = 0; c < Cp; ++c)
            s += q[static_cast<size_t>((c * H + uh) * W + uw)] * k[static_cast<size_t>((c * H + jh) * W + jw)];
          scores.push_back(s);
          pos.push_back(jh * W + jw);
        }
      double mx = scores[0];
      for (double s : scores) mx = std::max(mx, s);
      double sum = 0.0;
      for (double& s : scores) {
        s = std::exp(s - mx);
        sum += s;
      }
      for (double& s : scores) s /= sum;
      for (int64_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (size_t i = 0; i < pos.size(); ++i) acc += scores[i] * v[static_cast<size_t>(c * P + pos[i])];
        out[static_cast<size_t>(c * P + uh * W + uw)] =
            acc + r[static_cast<size_t>(c * P + uh * W + uw)];
      }
    }
  return out;
}

/// Plain-loop depthwise-separable 1x1 projection (per-channel scale, then
/// pointwise mix), matching the DCA projection layout.
inline std::vector<double> dsconv1x1_oracle(const std::vector<double>& x, const std::vector<double>& depth,
                                            const std::vector<double>& point, int64_t C, int64_t Co,
                                            int64_t P) {
  std::vector<double> out(static_cast<size_t>(Co * P), 0.0);
  for (int64_t o = 0; o < Co; ++o)
    for (int64_t p = 0; p < P; ++p) {
      double acc = 0.0;
      for (int64_t c = 0; c < C; ++c)
        acc += point[static_cast<size_t>(o * C + c)] * depth[static_cast<size_t>(c)] *
               x[static_cast<size_t>(c * P + p)];
      out[static_cast<size_t>(o * P + p)] = acc;
    }
  return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - b[static_cast<size_t>(i)]));
  return m;
}

}  // namespace fetr::testing

#endif  // FETR_TESTS_TESTING_HPP
