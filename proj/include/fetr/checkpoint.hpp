// Copyright (c) 2026 the fetr authors
// SPDX-License-Identifier: Apache-2.0
//
// FETR checkpoint container: little-endian, row-major, name-sorted tensor
// records. Save -> load -> save is byte-identical.

#ifndef FETR_CHECKPOINT_HPP
#define FETR_CHECKPOINT_HPP

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "fetr/backbone.hpp"
#include "fetr/training.hpp"

namespace fetr {

inline constexpr char kCheckpointMagic[4] = {'F', 'E', 'T', 'R'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  uint32_t version = kCheckpointVersion;
  NetworkSpec spec;
  uint32_t epoch = 0;  // completed epochs
  uint64_t global_step = 0;
  double best_val = -1.0;
  uint64_t seed = 0;
  double split_ratio = 0.8;
  OptimizerKind opt_kind = OptimizerKind::kAdam;
  int64_t opt_step = 0;
  bool has_optimizer = false;
};

namespace detail {

struct ByteWriter {
  std::string buf;
  void u8(uint8_t v) { buf.push_back(static_cast<char>(v)); }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    buf.append(s);
  }
  void payload(const float* p, size_t n) {
    for (size_t i = 0; i < n; ++i) u32(std::bit_cast<uint32_t>(p[i]));
  }
  void payload(const double* p, size_t n) {
    for (size_t i = 0; i < n; ++i) u64(std::bit_cast<uint64_t>(p[i]));
  }
};

struct ByteReader {
  const uint8_t* p;
  size_t n;
  size_t pos = 0;
  void need(size_t k) const {
    if (pos + k > n) throw CheckpointError("truncated checkpoint at byte " + std::to_string(pos));
  }
  uint8_t u8() {
    need(1);
    return p[pos++];
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[pos++]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[pos++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const uint32_t len = u32();
    need(len);
    std::string s(reinterpret_cast<const char*>(p + pos), len);
    pos += len;
    return s;
  }
  void payload(float* out, size_t k) {
    for (size_t i = 0; i < k; ++i) out[i] = std::bit_cast<float>(u32());
  }
  void payload(double* out, size_t k) {
    for (size_t i = 0; i < k; ++i) out[i] = std::bit_cast<double>(u64());
  }
};

template <typename T>
void write_record(ByteWriter& w, const std::string& name, const Tensor<T>& t) {
  w.str(name);
  w.u8(static_cast<uint8_t>(dtype_of<T>()));
  w.u8(static_cast<uint8_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) w.u64(static_cast<uint64_t>(t.dim(i)));
  w.payload(t.data(), static_cast<size_t>(t.numel()));
}

template <typename T>
void read_record_into(ByteReader& r, const std::string& expect_name, Tensor<T>& t) {
  const std::string name = r.str();
  if (name != expect_name)
    throw CheckpointError("checkpoint record '" + name + "' does not match expected '" + expect_name + "'");
  const uint8_t dt = r.u8();
  if (dt != static_cast<uint8_t>(dtype_of<T>()))
    throw CheckpointError("checkpoint dtype mismatch for '" + name + "'");
  const int rank = r.u8();
  if (rank != t.rank()) throw CheckpointError("checkpoint rank mismatch for '" + name + "'");
  for (int i = 0; i < rank; ++i)
    if (r.u64() != static_cast<uint64_t>(t.dim(i)))
      throw CheckpointError("checkpoint extent mismatch for '" + name + "'");
  r.payload(t.data(), static_cast<size_t>(t.numel()));
}

inline void write_spec(ByteWriter& w, const NetworkSpec& s) {
  for (int d : s.stage_depths) w.u32(static_cast<uint32_t>(d));
  w.u32(static_cast<uint32_t>(s.base_width));
  w.u32(static_cast<uint32_t>(s.num_classes));
  w.u32(static_cast<uint32_t>(s.se_reduction));
  w.u32(static_cast<uint32_t>(s.input_h));
  w.u32(static_cast<uint32_t>(s.input_w));
  uint32_t dca_mask = 0;
  for (int st : s.dca_stages) dca_mask |= 1u << st;
  w.u32(dca_mask);
  w.u8(static_cast<uint8_t>((s.with_stylerm ? 1 : 0) | (s.with_se ? 2 : 0)));
}

inline NetworkSpec read_spec(ByteReader& r) {
  NetworkSpec s;
  for (int i = 0; i < 4; ++i) s.stage_depths[static_cast<size_t>(i)] = static_cast<int>(r.u32());
  s.base_width = static_cast<int>(r.u32());
  s.num_classes = static_cast<int>(r.u32());
  s.se_reduction = static_cast<int>(r.u32());
  s.input_h = static_cast<int>(r.u32());
  s.input_w = static_cast<int>(r.u32());
  const uint32_t dca_mask = r.u32();
  s.dca_stages.clear();
  for (int st = 1; st <= 4; ++st)
    if (dca_mask & (1u << st)) s.dca_stages.push_back(st);
  const uint8_t flags = r.u8();
  s.with_stylerm = flags & 1;
  s.with_se = flags & 2;
  return s;
}

template <typename T>
std::vector<size_t> name_sorted_order(const std::vector<typename ParamRegistry<T>::Param>& params) {
  std::vector<size_t> order(params.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return params[a].name < params[b].name; });
  return order;
}

inline std::vector<uint8_t> read_all_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void check_header(ByteReader& r) {
  r.need(4);
  if (std::memcmp(r.p, kCheckpointMagic, 4) != 0) throw CheckpointError("bad checkpoint header");
  r.pos = 4;
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, Network<T>& net, const OptimizerState<T>* opt,
                     const CheckpointMeta& meta) {
  ParamRegistry<T> reg;
  net.register_params(reg);

  detail::ByteWriter w;
  w.buf.append(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  detail::write_spec(w, net.spec);
  w.u32(meta.epoch);
  w.u64(meta.global_step);
  w.f64(meta.best_val);
  w.u64(meta.seed);
  w.f64(meta.split_ratio);
  w.u8(static_cast<uint8_t>(meta.opt_kind));
  w.u64(static_cast<uint64_t>(meta.opt_step));
  w.u8(opt ? 1 : 0);

  const auto order = detail::name_sorted_order<T>(reg.params);
  w.u32(static_cast<uint32_t>(reg.params.size()));
  for (size_t i : order) detail::write_record(w, reg.params[i].name, reg.params[i].tensor);

  std::vector<size_t> border(reg.buffers.size());
  for (size_t i = 0; i < border.size(); ++i) border[i] = i;
  std::sort(border.begin(), border.end(),
            [&](size_t a, size_t b) { return reg.buffers[a].name < reg.buffers[b].name; });
  w.u32(static_cast<uint32_t>(reg.buffers.size()));
  for (size_t i : border) detail::write_record(w, reg.buffers[i].name, reg.buffers[i].tensor);

  if (opt) {
    for (size_t i : order) {
      w.payload(opt->m[i].data(), opt->m[i].size());
      if (opt->kind == OptimizerKind::kAdam) w.payload(opt->v[i].data(), opt->v[i].size());
    }
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint: " + path);
  out.write(w.buf.data(), static_cast<long>(w.buf.size()));
  if (!out) throw CheckpointError("checkpoint write failed: " + path);
}

/// Header only: enough to rebuild the network before loading tensors.
inline CheckpointMeta peek_checkpoint(const std::string& path) {
  const std::vector<uint8_t> bytes = detail::read_all_bytes(path);
  detail::ByteReader r{bytes.data(), bytes.size()};
  detail::check_header(r);
  CheckpointMeta meta;
  meta.spec = detail::read_spec(r);
  meta.epoch = r.u32();
  meta.global_step = r.u64();
  meta.best_val = r.f64();
  meta.seed = r.u64();
  meta.split_ratio = r.f64();
  meta.opt_kind = static_cast<OptimizerKind>(r.u8());
  meta.opt_step = static_cast<int64_t>(r.u64());
  meta.has_optimizer = r.u8() != 0;
  return meta;
}

/// Fill an already constructed network (and optionally optimizer state)
/// from a checkpoint. The network's structure must match the stored spec.
template <typename T>
CheckpointMeta load_checkpoint(const std::string& path, Network<T>& net, OptimizerState<T>* opt) {
  const std::vector<uint8_t> bytes = detail::read_all_bytes(path);
  detail::ByteReader r{bytes.data(), bytes.size()};
  detail::check_header(r);
  CheckpointMeta meta;
  meta.spec = detail::read_spec(r);
  meta.epoch = r.u32();
  meta.global_step = r.u64();
  meta.best_val = r.f64();
  meta.seed = r.u64();
  meta.split_ratio = r.f64();
  meta.opt_kind = static_cast<OptimizerKind>(r.u8());
  meta.opt_step = static_cast<int64_t>(r.u64());
  meta.has_optimizer = r.u8() != 0;

  ParamRegistry<T> reg;
  net.register_params(reg);
  const auto order = detail::name_sorted_order<T>(reg.params);

  const uint32_t n_params = r.u32();
  if (n_params != reg.params.size())
    throw CheckpointError("checkpoint holds " + std::to_string(n_params) + " parameters, network has " +
                          std::to_string(reg.params.size()));
  for (size_t i : order) detail::read_record_into(r, reg.params[i].name, reg.params[i].tensor);

  std::vector<size_t> border(reg.buffers.size());
  for (size_t i = 0; i < border.size(); ++i) border[i] = i;
  std::sort(border.begin(), border.end(),
            [&](size_t a, size_t b) { return reg.buffers[a].name < reg.buffers[b].name; });
  const uint32_t n_buffers = r.u32();
  if (n_buffers != reg.buffers.size()) throw CheckpointError("checkpoint buffer count mismatch");
  for (size_t i : border) detail::read_record_into(r, reg.buffers[i].name, reg.buffers[i].tensor);

  if (opt) {
    if (!meta.has_optimizer) throw CheckpointError("checkpoint has no optimizer state to resume from");
    *opt = OptimizerState<T>::init(reg, meta.opt_kind);
    opt->step = meta.opt_step;
    for (size_t i : order) {
      r.payload(opt->m[i].data(), opt->m[i].size());
      if (opt->kind == OptimizerKind::kAdam) r.payload(opt->v[i].data(), opt->v[i].size());
    }
  }
  return meta;
}

}  // namespace fetr

#endif  // FETR_CHECKPOINT_HPP
