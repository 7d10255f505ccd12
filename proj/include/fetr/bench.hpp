// Copyright (c) 2026 the fetr authors
// SPDX-License-Identifier: Apache-2.0
//
// Complexity verification: counted and timed criss-cross vs dense non-local
// attention.

#ifndef FETR_BENCH_HPP
#define FETR_BENCH_HPP

#include <iosfwd>
#include <vector>

#include "fetr/attention.hpp"

namespace fetr {

struct BenchReport {
  int h = 0, w = 0, channels = 0, reduced_channels = 0;
  uint64_t score_elements_cc = 0;
  uint64_t score_elements_nonlocal = 0;
  uint64_t macs_cc = 0;
  uint64_t macs_nonlocal = 0;
  double cc_ms = 0.0;
  double nl_ms = 0.0;
};

/// Dense attention over all (HW)^2 position pairs with the same Q/K/V
/// projections as cca_pass. Oracle/baseline only: it is not differentiable
/// and refuses maps larger than 4096 positions.
template <typename T>
Tensor<T> nonlocal_forward(const Tensor<T>& r, const DCAParams<T>& p) {
  if (r.rank() != 4) throw ShapeError("nonlocal_forward: input must be [B,C,H,W]");
  if (r.dim(1) != p.channels()) throw ShapeError("nonlocal_forward: channel mismatch");
  const int64_t B = r.dim(0), C = r.dim(1), H = r.dim(2), W = r.dim(3);
  const int64_t P = H * W;
  if (P > 4096)
    throw ResourceError("nonlocal_forward: " + std::to_string(P) +
                        " positions exceed the 4096-position guard for a dense score grid");
  if (r.requires_grad() && grad_mode())
    throw ContractError("nonlocal_forward: baseline has no backward; detach the input");

  Tensor<T> q = depthwise_separable_conv(r, p.q_depth, p.q_point);
  Tensor<T> k = depthwise_separable_conv(r, p.k_depth, p.k_point);
  Tensor<T> v = depthwise_separable_conv(r, p.v_depth, p.v_point);
  const int64_t Cp = q.dim(1);

  auto& counters = attn_counters();
  counters.score_elements += static_cast<uint64_t>(B * P * P);

  std::vector<T> out(r.vec().size());
  const T* pq = q.data();
  const T* pk = k.data();
  const T* pv = v.data();
  const T* pr = r.data();
  uint64_t macs = 0;
  std::vector<T> scores(static_cast<size_t>(P));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t u = 0; u < P; ++u) {
      for (int64_t j = 0; j < P; ++j) {
        T acc = T(0);
        for (int64_t c = 0; c < Cp; ++c) {
          acc += pq[(b * Cp + c) * P + u] * pk[(b * Cp + c) * P + j];
          ++macs;
        }
        scores[static_cast<size_t>(j)] = acc;
      }
      T mx = scores[0];
      for (int64_t j = 1; j < P; ++j) mx = std::max(mx, scores[static_cast<size_t>(j)]);
      T sum = T(0);
      for (int64_t j = 0; j < P; ++j) {
        const T e = std::exp(scores[static_cast<size_t>(j)] - mx);
        scores[static_cast<size_t>(j)] = e;
        sum += e;
      }
      for (int64_t j = 0; j < P; ++j) scores[static_cast<size_t>(j)] /= sum;
      for (int64_t c = 0; c < C; ++c) {
        T acc = T(0);
        const T* vrow = pv + (b * C + c) * P;
        for (int64_t j = 0; j < P; ++j) acc += scores[static_cast<size_t>(j)] * vrow[j];
        out[static_cast<size_t>((b * C + c) * P + u)] = acc + pr[(b * C + c) * P + u];
      }
    }
  counters.affinity_macs += macs;
  return Tensor<T>::from(r.shape(), std::move(out));
}

/// Run criss-cross and dense non-local attention over square maps of the
/// given sizes; counters come from the executed kernels and times are the
/// median over `repeats` runs after one warm-up.
std::vector<BenchReport> run_bench(const std::vector<int>& sizes, int channels, int repeats);

/// CSV with header H,W,C,Cprime,cc_scores,nl_scores,cc_macs,nl_macs,cc_ms,nl_ms.
void write_bench_csv(std::ostream& os, const std::vector<BenchReport>& reports);

}  // namespace fetr

#endif  // FETR_BENCH_HPP
