// Copyright (c) 2026 the fetr authors
// SPDX-License-Identifier: Apache-2.0
//
// FE-TResNet assembly: space-to-depth stem, basic blocks carrying
// StyleRM + SE, bottleneck blocks carrying SE + DCA, linear classifier.

#ifndef FETR_BACKBONE_HPP
#define FETR_BACKBONE_HPP

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fetr/attention.hpp"

namespace fetr {

// ---------------------------------------------------------------------------
// Declarative network description
// ---------------------------------------------------------------------------

struct NetworkSpec {
  std::array<int, 4> stage_depths{1, 1, 1, 1};
  int base_width = 16;
  int num_classes = 10;
  std::vector<int> dca_stages{4};  // bottleneck stages that run DCA
  int se_reduction = 4;
  int input_h = 32;
  int input_w = 32;
  bool with_stylerm = true;
  bool with_se = true;

  bool stage_has_dca(int stage) const {
    for (int s : dca_stages)
      if (s == stage) return true;
    return false;
  }

  // Stage widths double per stage. Stages 1-2 are basic blocks (expansion 1),
  // 3-4 bottlenecks (expansion 4).
  int stage_width(int stage) const { return base_width << (stage - 1); }
  int stage_out_channels(int stage) const { return stage_width(stage) * (stage >= 3 ? 4 : 1); }

  void validate() const {
    if (num_classes < 2) throw ConfigError("network: num_classes must be >= 2");
    if (base_width < 4) throw ConfigError("network: base_width must be >= 4");
    for (int d : stage_depths)
      if (d < 1) throw ConfigError("network: stage depths must be >= 1");
    if (se_reduction < 1 || base_width % se_reduction != 0)
      throw ConfigError("network: se_reduction must divide base_width");
    for (int s : dca_stages)
      if (s < 1 || s > 4) throw ConfigError("network: dca stage indices must lie in 1..4");
    if (input_h % 4 != 0 || input_w % 4 != 0)
      throw ConfigError("network: input size must be divisible by 4 (stem block size), got " +
                        std::to_string(input_h) + "x" + std::to_string(input_w));
    // Stages 2-4 blur-pool their inputs, which needs extents >= 2 throughout.
    int h = input_h / 4, w = input_w / 4;
    for (int stage = 2; stage <= 4; ++stage) {
      if (h < 2 || w < 2)
        throw ConfigError("network: input " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                          " is too small for stage " + std::to_string(stage) + " downsampling");
      h = (h + 1) / 2;
      w = (w + 1) / 2;
    }
  }
};

// ---------------------------------------------------------------------------
// Parameter registry: a flat, stably named view over every learnable tensor
// and persistent buffer. The optimizer and checkpoint code work off this.
// ---------------------------------------------------------------------------

template <typename T>
struct ParamRegistry {
  struct Param {
    std::string name;
    Tensor<T> tensor;
    bool decay;  // participates in decoupled weight decay
  };
  struct Buffer {
    std::string name;
    Tensor<T> tensor;
  };
  std::vector<Param> params;
  std::vector<Buffer> buffers;

  void add_param(std::string name, Tensor<T> t, bool decay) {
    t.set_requires_grad(true);
    params.push_back({std::move(name), std::move(t), decay});
  }
  void add_buffer(std::string name, Tensor<T> t) { buffers.push_back({std::move(name), std::move(t)}); }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
  }
  void zero_grad() {
    for (auto& p : params) p.tensor.zero_grad();
  }
};

// ---------------------------------------------------------------------------
// Layer pieces
// ---------------------------------------------------------------------------

/// Convolution + batch norm, with an optional anti-alias blur between them
/// for stride-2 blocks.
template <typename T>
struct ConvBN {
  Tensor<T> w;  // [O,C,k,k]
  Tensor<T> gamma, beta, rmean, rvar;

  static ConvBN init(int64_t in_ch, int64_t out_ch, int k, Rng& rng, bool zero_gamma = false) {
    ConvBN cb;
    const T std = std::sqrt(T(2) / static_cast<T>(in_ch * k * k));
    cb.w = Tensor<T>::randn({out_ch, in_ch, k, k}, rng, std);
    cb.gamma = zero_gamma ? Tensor<T>::zeros({out_ch}) : Tensor<T>::ones({out_ch});
    cb.beta = Tensor<T>::zeros({out_ch});
    cb.rmean = Tensor<T>::zeros({out_ch});
    cb.rvar = Tensor<T>::ones({out_ch});
    return cb;
  }

  Tensor<T> forward(const Tensor<T>& x, int pad, bool train, bool blur = false) {
    Tensor<T> h = conv2d(x, w, 1, pad);
    if (blur) h = blur_pool(h);
    return batch_norm(h, gamma, beta, rmean, rvar, train);
  }

  int64_t param_count() const { return w.numel() + gamma.numel() + beta.numel(); }

  void register_into(ParamRegistry<T>& reg, const std::string& prefix) {
    reg.add_param(prefix + ".w", w, true);
    reg.add_param(prefix + ".bn.gamma", gamma, false);
    reg.add_param(prefix + ".bn.beta", beta, false);
    reg.add_buffer(prefix + ".bn.rmean", rmean);
    reg.add_buffer(prefix + ".bn.rvar", rvar);
  }
};

template <typename T>
void register_stylerm(ParamRegistry<T>& reg, StyleRMParams<T>& p, const std::string& prefix) {
  reg.add_param(prefix + ".cfc", p.cfc, false);
  reg.add_param(prefix + ".bn.gamma", p.bn_gamma, false);
  reg.add_param(prefix + ".bn.beta", p.bn_beta, false);
  reg.add_param(prefix + ".pre_conv", p.pre_conv, true);
  reg.add_buffer(prefix + ".bn.rmean", p.bn_rmean);
  reg.add_buffer(prefix + ".bn.rvar", p.bn_rvar);
}

template <typename T>
void register_se(ParamRegistry<T>& reg, SEParams<T>& p, const std::string& prefix) {
  reg.add_param(prefix + ".fc1", p.fc1, true);
  reg.add_param(prefix + ".fc2", p.fc2, true);
}

template <typename T>
void register_dca(ParamRegistry<T>& reg, DCAParams<T>& p, const std::string& prefix) {
  reg.add_param(prefix + ".q_depth", p.q_depth, false);
  reg.add_param(prefix + ".q_point", p.q_point, true);
  reg.add_param(prefix + ".k_depth", p.k_depth, false);
  reg.add_param(prefix + ".k_point", p.k_point, true);
  reg.add_param(prefix + ".v_depth", p.v_depth, false);
  reg.add_param(prefix + ".v_point", p.v_point, true);
}

/// Basic residual block: conv3x3-BN-relu-conv3x3-BN-StyleRM-SE-add-relu.
/// Stride-2 variants blur-pool both branches.
template <typename T>
struct BasicBlock {
  int64_t in_ch = 0, out_ch = 0;
  bool downsample = false;
  ConvBN<T> conv1, conv2;
  std::optional<StyleRMParams<T>> stylerm;
  std::optional<SEParams<T>> se;
  std::optional<ConvBN<T>> proj;

  static BasicBlock init(int64_t in_ch, int64_t out_ch, bool downsample, const NetworkSpec& spec, Rng& rng) {
    BasicBlock b;
    b.in_ch = in_ch;
    b.out_ch = out_ch;
    b.downsample = downsample;
    b.conv1 = ConvBN<T>::init(in_ch, out_ch, 3, rng);
    b.conv2 = ConvBN<T>::init(out_ch, out_ch, 3, rng, /*zero_gamma=*/true);
    if (spec.with_stylerm) b.stylerm = StyleRMParams<T>::init(out_ch, rng);
    if (spec.with_se) b.se = SEParams<T>::init(out_ch, spec.se_reduction, rng);
    if (in_ch != out_ch) b.proj = ConvBN<T>::init(in_ch, out_ch, 1, rng);
    return b;
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    Tensor<T> h = relu(conv1.forward(x, 1, train, downsample));
    h = conv2.forward(h, 1, train);
    if (stylerm) h = style_rm_forward(h, *stylerm, train);
    if (se) h = se_forward(h, *se);
    Tensor<T> shortcut = x;
    if (downsample) shortcut = blur_pool(shortcut);
    if (proj) shortcut = proj->forward(shortcut, 0, train);
    return relu(add(h, shortcut));
  }

  void register_into(ParamRegistry<T>& reg, const std::string& prefix) {
    conv1.register_into(reg, prefix + ".conv1");
    conv2.register_into(reg, prefix + ".conv2");
    if (stylerm) register_stylerm(reg, *stylerm, prefix + ".stylerm");
    if (se) register_se(reg, *se, prefix + ".se");
    if (proj) proj->register_into(reg, prefix + ".proj");
  }
};

/// Bottleneck block: 1x1-BN-relu, 3x3-BN-relu, SE, optional DCA, 1x1-BN,
/// residual add, relu. Output channels are 4x the mid width.
template <typename T>
struct Bottleneck {
  static constexpr int64_t kExpansion = 4;
  int64_t in_ch = 0, mid_ch = 0;
  bool downsample = false;
  ConvBN<T> conv1, conv2, conv3;
  std::optional<SEParams<T>> se;
  std::optional<DCAParams<T>> dca;
  std::optional<ConvBN<T>> proj;

  int64_t out_ch() const { return mid_ch * kExpansion; }

  static Bottleneck init(int64_t in_ch, int64_t mid_ch, bool downsample, bool with_dca,
                         const NetworkSpec& spec, Rng& rng) {
    Bottleneck b;
    b.in_ch = in_ch;
    b.mid_ch = mid_ch;
    b.downsample = downsample;
    b.conv1 = ConvBN<T>::init(in_ch, mid_ch, 1, rng);
    b.conv2 = ConvBN<T>::init(mid_ch, mid_ch, 3, rng);
    b.conv3 = ConvBN<T>::init(mid_ch, mid_ch * kExpansion, 1, rng, /*zero_gamma=*/true);
    if (spec.with_se) b.se = SEParams<T>::init(mid_ch, spec.se_reduction, rng);
    if (in_ch != mid_ch * kExpansion) b.proj = ConvBN<T>::init(in_ch, mid_ch * kExpansion, 1, rng);
    // DCA draws last so a paired init without it shares every other weight.
    if (with_dca) b.dca = DCAParams<T>::init(mid_ch, rng);
    return b;
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    Tensor<T> h = relu(conv1.forward(x, 0, train));
    h = relu(conv2.forward(h, 1, train, downsample));
    if (se) h = se_forward(h, *se);
    if (dca) h = dca_forward(h, *dca);
    h = conv3.forward(h, 0, train);
    Tensor<T> shortcut = x;
    if (downsample) shortcut = blur_pool(shortcut);
    if (proj) shortcut = proj->forward(shortcut, 0, train);
    return relu(add(h, shortcut));
  }

  void register_into(ParamRegistry<T>& reg, const std::string& prefix) {
    conv1.register_into(reg, prefix + ".conv1");
    conv2.register_into(reg, prefix + ".conv2");
    conv3.register_into(reg, prefix + ".conv3");
    if (se) register_se(reg, *se, prefix + ".se");
    if (dca) register_dca(reg, *dca, prefix + ".dca");
    if (proj) proj->register_into(reg, prefix + ".proj");
  }
};

// ---------------------------------------------------------------------------
// Full network
// ---------------------------------------------------------------------------

template <typename T>
struct Network {
  NetworkSpec spec;
  ConvBN<T> stem;  // 1x1 conv after space-to-depth
  std::vector<BasicBlock<T>> stage1, stage2;
  std::vector<Bottleneck<T>> stage3, stage4;
  Tensor<T> fc_w;  // [K, C_out]
  Tensor<T> fc_b;  // [K]

  static Network init(const NetworkSpec& spec, uint64_t seed) {
    spec.validate();
    Rng rng(mix_seed(seed, 0x1417));
    Network net;
    net.spec = spec;

    const int64_t bw = spec.base_width;
    net.stem = ConvBN<T>::init(3 * 16, bw, 1, rng);

    int64_t ch = bw;
    for (int i = 0; i < spec.stage_depths[0]; ++i) {
      net.stage1.push_back(BasicBlock<T>::init(ch, bw, false, spec, rng));
      ch = bw;
    }
    for (int i = 0; i < spec.stage_depths[1]; ++i) {
      net.stage2.push_back(BasicBlock<T>::init(ch, 2 * bw, i == 0, spec, rng));
      ch = 2 * bw;
    }
    for (int i = 0; i < spec.stage_depths[2]; ++i) {
      net.stage3.push_back(Bottleneck<T>::init(ch, 4 * bw, i == 0, spec.stage_has_dca(3), spec, rng));
      ch = net.stage3.back().out_ch();
    }
    for (int i = 0; i < spec.stage_depths[3]; ++i) {
      net.stage4.push_back(Bottleneck<T>::init(ch, 8 * bw, i == 0, spec.stage_has_dca(4), spec, rng));
      ch = net.stage4.back().out_ch();
    }

    const int64_t K = spec.num_classes;
    net.fc_w = Tensor<T>::randn({K, ch}, rng, std::sqrt(T(2) / static_cast<T>(ch)));
    net.fc_b = Tensor<T>::zeros({K});
    return net;
  }

  int64_t out_channels() const { return 32 * static_cast<int64_t>(spec.base_width); }

  /// Features just before the classifier: [B, C_out].
  Tensor<T> features(const Tensor<T>& x, bool train) {
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != spec.input_h || x.dim(3) != spec.input_w)
      throw ShapeError("network_forward: expected input [B,3," + std::to_string(spec.input_h) + "," +
                       std::to_string(spec.input_w) + "], got " + shape_str(x.shape()));
    Tensor<T> h = space_to_depth(x, 4);
    h = relu(stem.forward(h, 0, train));
    for (auto& b : stage1) h = b.forward(h, train);
    for (auto& b : stage2) h = b.forward(h, train);
    for (auto& b : stage3) h = b.forward(h, train);
    for (auto& b : stage4) h = b.forward(h, train);
    return global_pool(h, PoolStat::kMean);
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    Tensor<T> pooled = features(x, train);
    return add(linear(pooled, fc_w), reshape(fc_b, {1, spec.num_classes}));
  }

  void register_params(ParamRegistry<T>& reg) {
    stem.register_into(reg, "stem");
    for (size_t i = 0; i < stage1.size(); ++i) stage1[i].register_into(reg, "s1.b" + std::to_string(i));
    for (size_t i = 0; i < stage2.size(); ++i) stage2[i].register_into(reg, "s2.b" + std::to_string(i));
    for (size_t i = 0; i < stage3.size(); ++i) stage3[i].register_into(reg, "s3.b" + std::to_string(i));
    for (size_t i = 0; i < stage4.size(); ++i) stage4[i].register_into(reg, "s4.b" + std::to_string(i));
    reg.add_param("fc.w", fc_w, true);
    reg.add_param("fc.b", fc_b, false);
  }
};

/// Exact learnable-parameter count with a per-section breakdown. Attention
/// parameters are attributed to their own sections; everything else goes to
/// stem/stageN/classifier.
struct ParamBreakdown {
  int64_t total = 0;
  std::map<std::string, int64_t> by_section;
};

template <typename T>
ParamBreakdown count_parameters(Network<T>& net) {
  ParamRegistry<T> reg;
  net.register_params(reg);
  ParamBreakdown out;
  for (const auto& p : reg.params) {
    const int64_t n = p.tensor.numel();
    out.total += n;
    std::string section;
    if (p.name.find(".stylerm.") != std::string::npos)
      section = "stylerm";
    else if (p.name.find(".se.") != std::string::npos)
      section = "se";
    else if (p.name.find(".dca.") != std::string::npos)
      section = "dca";
    else if (p.name.rfind("stem", 0) == 0)
      section = "stem";
    else if (p.name.rfind("fc.", 0) == 0)
      section = "classifier";
    else
      section = "stage" + p.name.substr(1, 1);
    out.by_section[section] += n;
  }
  return out;
}

}  // namespace fetr

#endif  // FETR_BACKBONE_HPP
