// Copyright (c) 2026 the fetr authors
// SPDX-License-Identifier: Apache-2.0

#include "fetr/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ostream>

namespace fetr {

namespace {

double median_ms(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename F>
double time_ms(F&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

}  // namespace

std::vector<BenchReport> run_bench(const std::vector<int>& sizes, int channels, int repeats) {
  if (repeats < 3) throw ContractError("run_bench: repeats must be >= 3");
  if (channels < 1) throw ContractError("run_bench: channels must be >= 1");

  std::vector<BenchReport> reports;
  for (int size : sizes) {
    if (size < 1) throw ContractError("run_bench: sizes must be >= 1");
    Rng rng(mix_seed(0xbe9c0, static_cast<uint64_t>(size)));
    DCAParams<float> params = DCAParams<float>::init(channels, rng);
    Tensor<float> r = Tensor<float>::randn({1, channels, size, size}, rng);

    BenchReport rep;
    rep.h = rep.w = size;
    rep.channels = channels;
    rep.reduced_channels = static_cast<int>(DCAParams<float>::reduced_channels(channels));

    // Counters from a single instrumented run of each kernel.
    attn_counters().reset();
    (void)cca_pass(r, params);
    rep.score_elements_cc = attn_counters().score_elements;
    rep.macs_cc = attn_counters().affinity_macs;

    attn_counters().reset();
    (void)nonlocal_forward(r, params);
    rep.score_elements_nonlocal = attn_counters().score_elements;
    rep.macs_nonlocal = attn_counters().affinity_macs;

    // Warm-up once, then median of repeats.
    (void)cca_pass(r, params);
    std::vector<double> cc_times, nl_times;
    for (int i = 0; i < repeats; ++i) cc_times.push_back(time_ms([&] { (void)cca_pass(r, params); }));
    (void)nonlocal_forward(r, params);
    for (int i = 0; i < repeats; ++i)
      nl_times.push_back(time_ms([&] { (void)nonlocal_forward(r, params); }));
    rep.cc_ms = median_ms(cc_times);
    rep.nl_ms = median_ms(nl_times);
    reports.push_back(rep);
  }
  return reports;
}

void write_bench_csv(std::ostream& os, const std::vector<BenchReport>& reports) {
  os << "H,W,C,Cprime,cc_scores,nl_scores,cc_macs,nl_macs,cc_ms,nl_ms\n";
  char buf[256];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%d,%d,%llu,%llu,%llu,%llu,%.4f,%.4f\n", r.h, r.w, r.channels,
                  r.reduced_channels, static_cast<unsigned long long>(r.score_elements_cc),
                  static_cast<unsigned long long>(r.score_elements_nonlocal),
                  static_cast<unsigned long long>(r.macs_cc),
                  static_cast<unsigned long long>(r.macs_nonlocal), r.cc_ms, r.nl_ms);
    os << buf;
  }
}

}  // namespace fetr
