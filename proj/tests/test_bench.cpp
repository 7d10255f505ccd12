// Copyright (c) 2026 the fetr authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <sstream>

#include "fetr/bench.hpp"
#include "testing.hpp"

using namespace fetr;
using namespace fetr::testing;

TEST_SUITE_BEGIN("bench");

TEST_CASE("nonlocal singleton and score grid") {
  Rng rng(501);
  const int64_t C = 8;
  auto p = DCAParams<float>::init(C, rng);

  // 1x1 map degenerates to output = V + R
  auto r = Tensor<float>::randn({1, C, 1, 1}, rng);
  auto out = nonlocal_forward(r, p);
  auto v = depthwise_separable_conv(r, p.v_depth, p.v_point);
  for (int64_t c = 0; c < C; ++c)
    CHECK(out.data()[c] == doctest::Approx(v.data()[c] + r.data()[c]).epsilon(1e-6));

  // 8x8 map materializes (HW)^2 = 4096 scores per batch item
  auto r8 = Tensor<float>::randn({1, C, 8, 8}, rng);
  attn_counters().reset();
  (void)nonlocal_forward(r8, p);
  CHECK(attn_counters().score_elements == 4096);

  // the guard refuses maps beyond 4096 positions
  auto big = Tensor<float>::zeros({1, C, 65, 64});
  CHECK_THROWS_AS(nonlocal_forward(big, p), ResourceError);
}

TEST_CASE("masked dense equals criss-cross") {
  Rng rng(503);
  const int64_t C = 6, H = 5, W = 4;
  auto p = DCAParams<double>::init(C, rng);
  auto r = Tensor<double>::randn({1, C, H, W}, rng);

  // independent masked-dense oracle (plain loops) against the kernel
  const int64_t P = H * W;
  const int64_t Cp = DCAParams<double>::reduced_channels(C);
  auto q = dsconv1x1_oracle(r.vec(), p.q_depth.vec(), p.q_point.vec(), C, Cp, P);
  auto k = dsconv1x1_oracle(r.vec(), p.k_depth.vec(), p.k_point.vec(), C, Cp, P);
  auto v = dsconv1x1_oracle(r.vec(), p.v_depth.vec(), p.v_point.vec(), C, C, P);
  auto want = masked_dense_attention_oracle(q, k, v, r.vec(), Cp, C, H, W);
  auto got = cca_pass(r, p);
  CHECK(max_abs_diff(got, want) < 1e-8);
}

TEST_CASE("run_bench: counter exactness and csv") {
  auto reports = run_bench({4, 8}, 16, 3);
  REQUIRE(reports.size() == 2);
  for (const auto& rep : reports) {
    const uint64_t hw = static_cast<uint64_t>(rep.h) * rep.w;
    const uint64_t m = static_cast<uint64_t>(rep.h + rep.w - 1);
    CHECK(rep.score_elements_cc == hw * m);
    CHECK(rep.score_elements_nonlocal == hw * hw);
    CHECK(rep.macs_cc == static_cast<uint64_t>(rep.reduced_channels) * m * hw);
    CHECK(rep.macs_nonlocal == static_cast<uint64_t>(rep.reduced_channels) * hw * hw);
    CHECK(rep.cc_ms > 0.0);
    CHECK(rep.nl_ms > 0.0);
  }
  // H=W=4: 7 scores per position vs 16 dense
  CHECK(reports[0].score_elements_cc == 7ull * 16);
  CHECK(reports[0].score_elements_nonlocal == 256);

  std::ostringstream csv;
  write_bench_csv(csv, reports);
  CHECK(csv.str().rfind("H,W,C,Cprime,cc_scores,nl_scores,cc_macs,nl_macs,cc_ms,nl_ms\n", 0) == 0);
  int lines = 0;
  for (char c : csv.str())
    if (c == '\n') ++lines;
  CHECK(lines == 3);

  CHECK_THROWS_AS(run_bench({4}, 16, 2), ContractError);
}

TEST_CASE("element ratio at 64x64") {
  // (H+W-1)/(HW) = 127/4096 without running the full benchmark
  const uint64_t cc = 64ull * 64 * (64 + 64 - 1);
  const uint64_t nl = 64ull * 64 * 64 * 64;
  CHECK(static_cast<double>(cc) / static_cast<double>(nl) == doctest::Approx(127.0 / 4096.0));
}

TEST_SUITE_END();
