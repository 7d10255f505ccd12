// Copyright (c) 2026 the fetr authors
// SPDX-License-Identifier: Apache-2.0
//
// Feature-enhancement blocks: style recalibration (StyleRM), squeeze-and-
// excitation gating (SE), and two-pass criss-cross attention (DCA).

#ifndef FETR_ATTENTION_HPP
#define FETR_ATTENTION_HPP

#include <cstdint>

#include "fetr/tensor.hpp"

namespace fetr {

// Kernel-side instrumentation. Incremented by the attention kernels as work
// actually executes, so complexity claims are checked against executed
// operations rather than against a second copy of the same formula.
struct AttnCounters {
  uint64_t score_elements = 0;  // attention scores materialized
  uint64_t affinity_macs = 0;   // multiply-accumulates spent on Q.K affinities
  void reset() { *this = AttnCounters{}; }
};

inline AttnCounters& attn_counters() {
  thread_local AttnCounters c;
  return c;
}

// ---------------------------------------------------------------------------
// StyleRM
// ---------------------------------------------------------------------------

/// Per-(batch,channel) style statistics t = [mean, std], shape [B,C,2].
template <typename T>
struct StyleDescriptor {
  Tensor<T> t;
};

template <typename T>
struct StyleRMParams {
  Tensor<T> cfc;       // [C,2], channel-wise encoding of (mean, std)
  Tensor<T> bn_gamma;  // [C]
  Tensor<T> bn_beta;   // [C]
  Tensor<T> bn_rmean;  // [C] running buffer
  Tensor<T> bn_rvar;   // [C] running buffer
  Tensor<T> pre_conv;  // [C,1,3,3] depthwise spatial enhancement

  static StyleRMParams init(int64_t C, Rng& rng) {
    StyleRMParams p;
    p.cfc = Tensor<T>::randn({C, 2}, rng, T(0.5));
    p.bn_gamma = Tensor<T>::ones({C});
    p.bn_beta = Tensor<T>::zeros({C});
    p.bn_rmean = Tensor<T>::zeros({C});
    p.bn_rvar = Tensor<T>::ones({C});
    p.pre_conv = Tensor<T>::randn({C, 1, 3, 3}, rng, T(1) / T(3));
    return p;
  }

  int64_t channels() const { return cfc.dim(0); }
  int64_t param_count() const {
    return cfc.numel() + bn_gamma.numel() + bn_beta.numel() + pre_conv.numel();
  }
};

/// Style pooling: t[...,0] = spatial mean, t[...,1] = spatial std.
template <typename T>
StyleDescriptor<T> style_pool(const Tensor<T>& x) {
  Tensor<T> mean = global_pool(x, PoolStat::kMean);
  Tensor<T> sdev = global_pool(x, PoolStat::kStd);
  return StyleDescriptor<T>{stack_last(mean, sdev)};
}

/// Style integration: channel-wise encoding z = w . t, batch norm over the
/// batch axis, sigmoid squash. Returns gates in (0,1)^{B x C}.
template <typename T>
Tensor<T> style_integrate(const StyleDescriptor<T>& t, StyleRMParams<T>& p, bool train) {
  const int64_t C = p.channels();
  if (t.t.rank() != 3 || t.t.dim(1) != C || t.t.dim(2) != 2)
    throw ShapeError("style_integrate: descriptor must be [B," + std::to_string(C) + ",2]");
  Tensor<T> w = reshape(p.cfc, {1, C, 2});
  Tensor<T> z = sum_axis(mul(t.t, w), 2);  // [B,C]
  z = batch_norm(z, p.bn_gamma, p.bn_beta, p.bn_rmean, p.bn_rvar, train);
  return sigmoid(z);
}

/// Full recalibration: depthwise 3x3 enhancement feeds the style statistics;
/// the resulting gate rescales the original input, so an all-ones gate is an
/// exact identity.
template <typename T>
Tensor<T> style_rm_forward(const Tensor<T>& x, StyleRMParams<T>& p, bool train) {
  Tensor<T> enhanced = depthwise_conv2d(x, p.pre_conv, 1, 1);
  Tensor<T> gates = style_integrate(style_pool(enhanced), p, train);
  const int64_t B = x.dim(0), C = x.dim(1);
  return mul(x, reshape(gates, {B, C, 1, 1}));
}

// ---------------------------------------------------------------------------
// SE
// ---------------------------------------------------------------------------

template <typename T>
struct SEParams {
  Tensor<T> fc1;  // [C/r, C]
  Tensor<T> fc2;  // [C, C/r]
  int reduction = 4;

  static SEParams init(int64_t C, int reduction, Rng& rng) {
    if (reduction < 1 || C % reduction != 0)
      throw ConfigError("SE reduction " + std::to_string(reduction) + " must divide channel count " +
                        std::to_string(C));
    const int64_t mid = C / reduction;
    SEParams p;
    p.fc1 = Tensor<T>::randn({mid, C}, rng, std::sqrt(T(2) / static_cast<T>(C)));
    p.fc2 = Tensor<T>::randn({C, mid}, rng, std::sqrt(T(2) / static_cast<T>(mid)));
    p.reduction = reduction;
    return p;
  }

  int64_t channels() const { return fc1.dim(1); }
  int64_t param_count() const { return fc1.numel() + fc2.numel(); }
};

template <typename T>
Tensor<T> se_forward(const Tensor<T>& x, const SEParams<T>& p) {
  const int64_t B = x.dim(0), C = x.dim(1);
  if (C != p.channels()) throw ShapeError("se_forward: channel mismatch");
  Tensor<T> squeezed = global_pool(x, PoolStat::kMean);          // [B,C]
  Tensor<T> hidden = relu(linear(squeezed, p.fc1));              // [B,C/r]
  Tensor<T> gates = sigmoid(linear(hidden, p.fc2));              // [B,C]
  return mul(x, reshape(gates, {B, C, 1, 1}));
}

// ---------------------------------------------------------------------------
// DCA (criss-cross attention with depthwise-separable projections)
// ---------------------------------------------------------------------------

/// Q/K/V projections are depthwise-separable 1x1: a learnable per-channel
/// scale followed by pointwise mixing. Keeping the projections spatially
/// local preserves the criss-cross sparsity pattern exactly: a single pass
/// couples a position only with its own row and column. One parameter set
/// serves both passes.
template <typename T>
struct DCAParams {
  Tensor<T> q_depth, q_point;  // [C,1,1,1], [C',C,1,1]
  Tensor<T> k_depth, k_point;  // [C,1,1,1], [C',C,1,1]
  Tensor<T> v_depth, v_point;  // [C,1,1,1], [C,C,1,1]

  static int64_t reduced_channels(int64_t C) { return std::max<int64_t>(1, C / 8); }

  static DCAParams init(int64_t C, Rng& rng) {
    const int64_t Cp = reduced_channels(C);
    DCAParams p;
    const T pw_std = std::sqrt(T(2) / static_cast<T>(C));
    p.q_depth = Tensor<T>::randn({C, 1, 1, 1}, rng, T(0.25), T(1));
    p.q_point = Tensor<T>::randn({Cp, C, 1, 1}, rng, pw_std);
    p.k_depth = Tensor<T>::randn({C, 1, 1, 1}, rng, T(0.25), T(1));
    p.k_point = Tensor<T>::randn({Cp, C, 1, 1}, rng, pw_std);
    p.v_depth = Tensor<T>::randn({C, 1, 1, 1}, rng, T(0.25), T(1));
    p.v_point = Tensor<T>::randn({C, C, 1, 1}, rng, pw_std);
    return p;
  }

  int64_t channels() const { return q_depth.dim(0); }
  int64_t param_count() const {
    return q_depth.numel() + q_point.numel() + k_depth.numel() + k_point.numel() + v_depth.numel() +
           v_point.numel();
  }
};

namespace detail {

// Canonical order of the H+W-1 attention positions of u=(h,w):
// indices [0,H) walk the column (i,w); indices [H, H+W-1) walk the row
// (h,j) skipping j == w. Position u itself appears exactly once, at index h.
inline void cc_position(int64_t idx, int64_t h, int64_t w, int64_t H, int64_t* ph, int64_t* pw) {
  if (idx < H) {
    *ph = idx;
    *pw = w;
  } else {
    int64_t j = idx - H;
    if (j >= w) ++j;
    *ph = h;
    *pw = j;
  }
}

}  // namespace detail

/// Fused criss-cross attention core: for each position u the affinities
/// D_u = Q_u . K_i over the H+W-1 positions sharing u's row or column are
/// softmax-normalized and used to aggregate V. The residual add lives in
/// cca_pass.
template <typename T>
Tensor<T> criss_cross_attend(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  const int64_t B = q.dim(0), Cp = q.dim(1), H = q.dim(2), W = q.dim(3);
  const int64_t C = v.dim(1);
  if (k.shape() != q.shape()) throw ShapeError("criss_cross_attend: Q and K shapes differ");
  if (v.dim(0) != B || v.dim(2) != H || v.dim(3) != W)
    throw ShapeError("criss_cross_attend: V spatial extents differ from Q");
  if (H < 1 || W < 1) throw ShapeError("criss_cross_attend: empty spatial extent");
  const int64_t M = H + W - 1;

  auto& counters = attn_counters();
  counters.score_elements += static_cast<uint64_t>(B * M * H * W);

  // attn[b, i, h, w] over the M criss-cross positions of (h, w)
  std::vector<T> attn(static_cast<size_t>(B * M * H * W));
  std::vector<T> out(static_cast<size_t>(B * C * H * W));
  const T* pq = q.data();
  const T* pk = k.data();
  const T* pv = v.data();
  uint64_t macs = 0;
  std::vector<T> scores(static_cast<size_t>(M));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w) {
        for (int64_t i = 0; i < M; ++i) {
          int64_t ph, pw;
          detail::cc_position(i, h, w, H, &ph, &pw);
          T acc = T(0);
          for (int64_t c = 0; c < Cp; ++c) {
            acc += pq[((b * Cp + c) * H + h) * W + w] * pk[((b * Cp + c) * H + ph) * W + pw];
            ++macs;
          }
          scores[static_cast<size_t>(i)] = acc;
        }
        T mx = scores[0];
        for (int64_t i = 1; i < M; ++i) mx = std::max(mx, scores[static_cast<size_t>(i)]);
        T sum = T(0);
        for (int64_t i = 0; i < M; ++i) {
          const T e = std::exp(scores[static_cast<size_t>(i)] - mx);
          scores[static_cast<size_t>(i)] = e;
          sum += e;
        }
        T* arow = attn.data() + ((b * M) * H + h) * W + w;
        for (int64_t i = 0; i < M; ++i) arow[i * H * W] = scores[static_cast<size_t>(i)] / sum;
        for (int64_t c = 0; c < C; ++c) {
          T acc = T(0);
          for (int64_t i = 0; i < M; ++i) {
            int64_t ph, pw;
            detail::cc_position(i, h, w, H, &ph, &pw);
            acc += arow[i * H * W] * pv[((b * C + c) * H + ph) * W + pw];
          }
          out[static_cast<size_t>(((b * C + c) * H + h) * W + w)] = acc;
        }
      }
  counters.affinity_macs += macs;

  auto qi = q.impl();
  auto ki = k.impl();
  auto vi = v.impl();
  return make_op<T>(
      "criss_cross_attend", {B, C, H, W}, std::move(out), {q, k, v},
      [qi, ki, vi, B, Cp, C, H, W, M, attn = std::move(attn)](const std::vector<T>& g) {
        if (qi->requires_grad) qi->ensure_grad();
        if (ki->requires_grad) ki->ensure_grad();
        if (vi->requires_grad) vi->ensure_grad();
        std::vector<T> dattn(static_cast<size_t>(M));
        std::vector<T> dscore(static_cast<size_t>(M));
        for (int64_t b = 0; b < B; ++b)
          for (int64_t h = 0; h < H; ++h)
            for (int64_t w = 0; w < W; ++w) {
              const T* arow = attn.data() + ((b * M) * H + h) * W + w;
              // dV and d(attention)
              for (int64_t i = 0; i < M; ++i) dattn[static_cast<size_t>(i)] = T(0);
              for (int64_t c = 0; c < C; ++c) {
                const T gv = g[static_cast<size_t>(((b * C + c) * H + h) * W + w)];
                if (gv == T(0)) continue;
                for (int64_t i = 0; i < M; ++i) {
                  int64_t ph, pw;
                  detail::cc_position(i, h, w, H, &ph, &pw);
                  const size_t vofs = static_cast<size_t>(((b * C + c) * H + ph) * W + pw);
                  if (vi->requires_grad) vi->grad[vofs] += gv * arow[i * H * W];
                  dattn[static_cast<size_t>(i)] += gv * vi->data[vofs];
                }
              }
              // softmax backward
              T dot = T(0);
              for (int64_t i = 0; i < M; ++i) dot += dattn[static_cast<size_t>(i)] * arow[i * H * W];
              for (int64_t i = 0; i < M; ++i)
                dscore[static_cast<size_t>(i)] = arow[i * H * W] * (dattn[static_cast<size_t>(i)] - dot);
              // dQ, dK
              for (int64_t i = 0; i < M; ++i) {
                const T ds = dscore[static_cast<size_t>(i)];
                if (ds == T(0)) continue;
                int64_t ph, pw;
                detail::cc_position(i, h, w, H, &ph, &pw);
                for (int64_t c = 0; c < Cp; ++c) {
                  const size_t qofs = static_cast<size_t>(((b * Cp + c) * H + h) * W + w);
                  const size_t kofs = static_cast<size_t>(((b * Cp + c) * H + ph) * W + pw);
                  if (qi->requires_grad) qi->grad[qofs] += ds * ki->data[kofs];
                  if (ki->requires_grad) ki->grad[kofs] += ds * qi->data[qofs];
                }
              }
            }
      });
}

/// One criss-cross pass: project Q/K/V, attend along rows and columns, add
/// the input back.
template <typename T>
Tensor<T> cca_pass(const Tensor<T>& r, const DCAParams<T>& p) {
  if (r.rank() != 4) throw ShapeError("cca_pass: input must be [B,C,H,W]");
  if (r.dim(1) != p.channels()) throw ShapeError("cca_pass: channel mismatch");
  Tensor<T> q = depthwise_separable_conv(r, p.q_depth, p.q_point);
  Tensor<T> k = depthwise_separable_conv(r, p.k_depth, p.k_point);
  Tensor<T> v = depthwise_separable_conv(r, p.v_depth, p.v_point);
  return add(criss_cross_attend(q, k, v), r);
}

/// Two criss-cross passes with one shared parameter set; the second pass
/// closes the receptive field over every position pair.
template <typename T>
Tensor<T> dca_forward(const Tensor<T>& r, const DCAParams<T>& p) {
  return cca_pass(cca_pass(r, p), p);
}

}  // namespace fetr

#endif  // FETR_ATTENTION_HPP
