// Copyright (c) 2026 the fetr authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "fetr/tensor.hpp"
#include "testing.hpp"

using namespace fetr;
using namespace fetr::testing;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("elementwise basics") {
  auto s = sigmoid(Tensor<double>::scalar(0.0));
  CHECK(s.item() == doctest::Approx(0.5).epsilon(1e-12));

  auto r = relu(Tensor<double>::from({2}, {-3.0, 3.0}));
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[1] == 3.0);

  auto a = add(Tensor<double>::from({2}, {1.0, 2.0}), Tensor<double>::from({2}, {3.0, 4.0}));
  CHECK(a.data()[0] == 4.0);
  CHECK(a.data()[1] == 6.0);

  // sigmoid output strictly inside (0,1) even for extreme logits
  auto ext = sigmoid(Tensor<double>::from({2}, {-800.0, 800.0}));
  CHECK(ext.data()[0] > 0.0);
  CHECK(ext.data()[1] < 1.0);
}

TEST_CASE("elementwise broadcasting") {
  // [B,C,1,1] gate against [B,C,H,W] activations
  auto x = Tensor<double>::ones({2, 3, 2, 2});
  auto g = Tensor<double>::from({2, 3, 1, 1}, {1, 2, 3, 4, 5, 6});
  auto y = mul(x, g);
  CHECK(y.shape() == Shape{2, 3, 2, 2});
  CHECK(y.data()[0] == 1.0);
  CHECK(y.data()[4] == 2.0);   // second channel
  CHECK(y.data()[23] == 6.0);  // last element

  CHECK_THROWS_AS(add(Tensor<double>::ones({2, 3}), Tensor<double>::ones({2, 4})), ShapeError);
}

TEST_CASE("matmul against triple-loop oracle") {
  // identity
  auto eye = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  auto m = Tensor<double>::from({2, 2}, {3, -1, 2, 7});
  auto prod = matmul(eye, m);
  for (int i = 0; i < 4; ++i) CHECK(prod.data()[i] == m.data()[i]);

  auto row = matmul(Tensor<double>::from({1, 2}, {1, 2}), Tensor<double>::from({2, 1}, {3, 4}));
  CHECK(row.item() == 11.0);

  Rng rng(7);
  auto a = Tensor<double>::randn({3, 4}, rng);
  auto b = Tensor<double>::randn({4, 2}, rng);
  auto c = matmul(a, b);
  auto ref = matmul_oracle(a.vec(), b.vec(), 3, 4, 2);
  CHECK(max_abs_diff(c, ref) < 1e-12);

  CHECK_THROWS_AS(matmul(Tensor<double>::ones({2, 3}), Tensor<double>::ones({2, 3})), ShapeError);
}

TEST_CASE("conv2d identity and box kernels") {
  Rng rng(3);
  auto x = Tensor<double>::randn({1, 1, 4, 4}, rng);
  auto w1 = Tensor<double>::ones({1, 1, 1, 1});
  auto y = conv2d(x, w1, 1, 0);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);

  auto c = Tensor<double>::full({1, 1, 5, 5}, 2.0);
  auto box = Tensor<double>::ones({1, 1, 3, 3});
  auto s = conv2d(c, box, 1, 0);
  CHECK(s.shape() == Shape{1, 1, 3, 3});
  for (int64_t i = 0; i < s.numel(); ++i) CHECK(s.data()[i] == doctest::Approx(18.0));
}

TEST_CASE("conv2d against 6-loop oracle") {
  Rng rng(11);
  auto x = Tensor<double>::randn({1, 2, 5, 5}, rng);
  auto w = Tensor<double>::randn({3, 2, 3, 3}, rng);
  for (int stride : {1, 2})
    for (int pad : {0, 1}) {
      auto y = conv2d(x, w, stride, pad);
      auto ref = conv2d_oracle(x.vec(), w.vec(), 1, 2, 5, 5, 3, 3, stride, pad, y.dim(2), y.dim(3));
      CHECK(max_abs_diff(y, ref) < 1e-12);
    }
  CHECK_THROWS_AS(conv2d(Tensor<double>::ones({1, 1, 2, 2}), Tensor<double>::ones({1, 1, 3, 3}), 1, 0),
                  ShapeError);
  CHECK_THROWS_AS(conv2d(Tensor<double>::ones({1, 2, 5, 5}), Tensor<double>::ones({1, 3, 3, 3}), 1, 1),
                  ShapeError);
}

TEST_CASE("depthwise separable conv") {
  // k=1, unit depthwise, identity pointwise: exact identity
  Rng rng(5);
  auto x = Tensor<double>::randn({1, 3, 4, 4}, rng);
  auto wd = Tensor<double>::ones({3, 1, 1, 1});
  std::vector<double> eye(9, 0.0);
  eye[0] = eye[4] = eye[8] = 1.0;
  auto wp = Tensor<double>::from({3, 3, 1, 1}, eye);
  auto y = depthwise_separable_conv(x, wd, wp);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-14));

  // parameter count formula: C*k^2 + O*C vs dense O*C*k^2
  const int64_t C = 8, O = 8, k = 3;
  CHECK(C * k * k + O * C == 136);
  CHECK(O * C * k * k == 576);

  // random case equals per-channel conv then 1x1 dense conv
  auto wd3 = Tensor<double>::randn({3, 1, 3, 3}, rng);
  auto wp2 = Tensor<double>::randn({5, 3, 1, 1}, rng);
  auto got = depthwise_separable_conv(x, wd3, wp2);
  auto mid = depthwise_conv2d(x, wd3, 1, 1);
  auto ref = conv2d(mid, wp2, 1, 0);
  for (int64_t i = 0; i < got.numel(); ++i)
    CHECK(got.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-13));

  CHECK_THROWS_AS(depthwise_separable_conv(x, Tensor<double>::ones({4, 1, 3, 3}), wp2), ShapeError);
}

TEST_CASE("batch_norm train/eval semantics") {
  Rng rng(13);
  const int64_t B = 4, C = 3, H = 5, W = 5;
  auto x = Tensor<double>::randn({B, C, H, W}, rng, 2.0, 0.7);
  auto gamma = Tensor<double>::ones({C});
  auto beta = Tensor<double>::zeros({C});
  auto rmean = Tensor<double>::zeros({C});
  auto rvar = Tensor<double>::ones({C});

  auto y = batch_norm(x, gamma, beta, rmean, rvar, true);
  const int64_t N = B * H * W;
  for (int64_t c = 0; c < C; ++c) {
    double m = 0, v = 0;
    for (int64_t b = 0; b < B; ++b)
      for (int64_t s = 0; s < H * W; ++s) m += y.data()[(b * C + c) * H * W + s];
    m /= static_cast<double>(N);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t s = 0; s < H * W; ++s) {
        const double d = y.data()[(b * C + c) * H * W + s] - m;
        v += d * d;
      }
    v /= static_cast<double>(N);
    CHECK(std::abs(m) <= 1e-5);
    CHECK(std::abs(v - 1.0) <= 1e-4);
  }

  // affine transform on normalized input
  auto gamma2 = Tensor<double>::full({C}, 2.0);
  auto beta2 = Tensor<double>::full({C}, 3.0);
  auto y2 = batch_norm(x, gamma2, beta2, rmean, rvar, true);
  double m2 = 0;
  for (int64_t s = 0; s < H * W; ++s) m2 += y2.data()[s];
  for (int64_t b = 1; b < B; ++b)
    for (int64_t s = 0; s < H * W; ++s) m2 += y2.data()[(b * C) * H * W + s];
  m2 /= static_cast<double>(N);
  CHECK(m2 == doctest::Approx(3.0).epsilon(1e-10));

  // eval mode: deterministic, no state mutation
  auto rm_before = rmean.vec();
  auto e1 = batch_norm(x, gamma, beta, rmean, rvar, false);
  auto e2 = batch_norm(x, gamma, beta, rmean, rvar, false);
  CHECK(e1.vec() == e2.vec());
  CHECK(rmean.vec() == rm_before);

  // degenerate batch
  auto one = Tensor<double>::randn({1, C}, rng);
  auto g1 = Tensor<double>::ones({C});
  auto b1 = Tensor<double>::zeros({C});
  CHECK_THROWS_AS(batch_norm(one, g1, b1, rmean, rvar, true), DegenerateBatchError);
}

TEST_CASE("global_pool mean and std") {
  auto c5 = Tensor<double>::full({1, 1, 3, 3}, 5.0);
  auto m = global_pool(c5, PoolStat::kMean);
  auto s = global_pool(c5, PoolStat::kStd);
  CHECK(m.item() == doctest::Approx(5.0));
  CHECK(s.item() <= std::sqrt(1e-5) + 1e-12);

  auto two = Tensor<double>::from({1, 1, 1, 2}, {1.0, 3.0});
  CHECK(global_pool(two, PoolStat::kMean).item() == doctest::Approx(2.0));
  CHECK(global_pool(two, PoolStat::kStd).item() == doctest::Approx(std::sqrt(1.0 + 1e-5)).epsilon(1e-12));

  Rng rng(17);
  auto x = Tensor<double>::randn({2, 3, 4, 4}, rng);
  auto mean = global_pool(x, PoolStat::kMean);
  auto sdev = global_pool(x, PoolStat::kStd);
  for (int64_t bc = 0; bc < 6; ++bc) {
    double om, os;
    channel_stats_oracle(x.data() + bc * 16, 16, &om, &os);
    CHECK(std::abs(mean.data()[bc] - om) < 1e-10);
    CHECK(std::abs(sdev.data()[bc] - os) < 1e-10);
  }
}

TEST_CASE("softmax properties") {
  auto u = softmax(Tensor<double>::zeros({1, 4}), 1);
  for (int i = 0; i < 4; ++i) CHECK(u.data()[i] == doctest::Approx(0.25).epsilon(1e-12));

  auto p = softmax(Tensor<double>::from({2}, {0.0, std::log(3.0)}), 0);
  CHECK(p.data()[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(p.data()[1] == doctest::Approx(0.75).epsilon(1e-12));

  Rng rng(23);
  auto x = Tensor<double>::randn({3, 5, 2}, rng, 3.0);
  for (int axis : {0, 1, 2}) {
    auto s = softmax(x, axis);
    // slices sum to 1, all entries strictly positive
    for (int64_t i = 0; i < s.numel(); ++i) CHECK(s.data()[i] > 0.0);
    // shift invariance
    auto shifted = softmax(add_scalar(x, 13.75), axis);
    for (int64_t i = 0; i < s.numel(); ++i)
      CHECK(std::abs(s.data()[i] - shifted.data()[i]) < 1e-12);
  }
  auto s1 = softmax(x, 1);
  for (int64_t o = 0; o < 3; ++o)
    for (int64_t in = 0; in < 2; ++in) {
      double sum = 0;
      for (int64_t j = 0; j < 5; ++j) sum += s1.data()[(o * 5 + j) * 2 + in];
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }
  // no overflow on huge logits
  auto big = softmax(Tensor<double>::from({2}, {1e4, 1e4 + 1}), 0);
  CHECK(std::isfinite(big.data()[0]));
}

TEST_CASE("blur_pool") {
  auto c = Tensor<double>::full({1, 2, 6, 6}, 3.25);
  auto y = blur_pool(c);
  CHECK(y.shape() == Shape{1, 2, 3, 3});
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(3.25).epsilon(1e-14));

  // odd extents round up
  auto odd = blur_pool(Tensor<double>::full({1, 1, 5, 7}, 1.0));
  CHECK(odd.shape() == Shape{1, 1, 3, 4});

  // impulse response: every output tap traced independently, including
  // reflected reads
  auto imp = Tensor<double>::zeros({1, 1, 4, 4});
  imp.data()[1 * 4 + 1] = 16.0;
  auto resp = blur_pool(imp);
  auto reflect = [](int i, int n) { return i < 0 ? -i : (i >= n ? 2 * n - 2 - i : i); };
  const double taps[3] = {0.25, 0.5, 0.25};
  for (int oh = 0; oh < 2; ++oh)
    for (int ow = 0; ow < 2; ++ow) {
      double expect = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if (reflect(2 * oh + dy, 4) == 1 && reflect(2 * ow + dx, 4) == 1)
            expect += taps[dy + 1] * taps[dx + 1] * 16.0;
      CHECK(resp.data()[oh * 2 + ow] == doctest::Approx(expect).epsilon(1e-12));
    }

  CHECK_THROWS_AS(blur_pool(Tensor<double>::ones({1, 1, 1, 4})), ShapeError);
}

TEST_CASE("space_to_depth") {
  std::vector<double> ramp(16);
  for (int i = 0; i < 16; ++i) ramp[static_cast<size_t>(i)] = i;
  auto x = Tensor<double>::from({1, 1, 4, 4}, ramp);
  auto y = space_to_depth(x, 4);
  CHECK(y.shape() == Shape{1, 16, 1, 1});
  CHECK(y.numel() == x.numel());
  std::vector<double> sorted(y.vec());
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 16; ++i) CHECK(sorted[static_cast<size_t>(i)] == static_cast<double>(i));

  // round trip is bit exact
  Rng rng(29);
  auto z = Tensor<double>::randn({2, 3, 8, 8}, rng);
  auto rt = depth_to_space(space_to_depth(z, 2), 2);
  CHECK(rt.vec() == z.vec());

  CHECK_THROWS_AS(space_to_depth(Tensor<double>::ones({1, 1, 5, 4}), 4), ShapeError);
}

TEST_CASE("backward basics and accumulation") {
  auto x = Tensor<double>::from({3}, {1.0, 2.0, 3.0});
  x.set_requires_grad(true);
  auto loss = sum_all(x);
  loss.backward();
  for (int i = 0; i < 3; ++i) CHECK(x.grad_vec()[static_cast<size_t>(i)] == 1.0);

  auto x2 = Tensor<double>::from({2}, {1.0, 2.0});
  x2.set_requires_grad(true);
  auto l2 = sum_all(mul(x2, x2));
  l2.backward();
  CHECK(x2.grad_vec()[0] == doctest::Approx(2.0));
  CHECK(x2.grad_vec()[1] == doctest::Approx(4.0));

  // repeated backward accumulates on leaves
  auto l3 = sum_all(mul(x2, x2));
  l3.backward();
  l3.backward();
  CHECK(x2.grad_vec()[0] == doctest::Approx(6.0));
}

TEST_CASE("backward rejects non-scalar roots") {
  auto x = Tensor<double>::ones({2, 2});
  x.set_requires_grad(true);
  auto y = mul(x, x);
  CHECK_THROWS_AS(y.backward(), ContractError);
}

TEST_CASE("determinism: same seed, same bits") {
  auto make = [] {
    Rng rng(99);
    auto a = Tensor<float>::randn({4, 4}, rng);
    auto b = Tensor<float>::randn({4, 4}, rng);
    return matmul(a, b).vec();
  };
  CHECK(make() == make());
}

TEST_SUITE_END();
