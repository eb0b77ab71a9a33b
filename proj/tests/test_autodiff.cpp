// Copyright (c) the nvf authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>

#include "doctest.h"
#include "grad_check.h"
#include "nvf/adam.h"
#include "nvf/graph.h"
#include "test_util.h"

using namespace nvf;
using nvf_test::MaxAbsDiff;
using nvf_test::NaiveConv3d;
using nvf_test::NaiveConvTranspose3d;
using nvf_test::RandomTensor;

TEST_CASE("conv3d 1x1 kernel multiplies") {
  Graph g;
  Tensor x = Tensor::Scalar(3.5);
  Tensor w = Tensor::Scalar(-2.0);
  Tensor b = Tensor::Scalar(0.0);
  Var out = Conv3d(g, g.Constant(x), g.Constant(w), g.Constant(b), 1, 0);
  CHECK(out->value.scalar() == doctest::Approx(-7.0));
}

TEST_CASE("conv3d identity kernel with padding") {
  SplitMix64 rng(1);
  Tensor x = RandomTensor(Shape(1, 1, 4, 4, 4), rng);
  Tensor w{Shape(1, 1, 3, 3, 3)};
  w.at(0, 0, 1, 1, 1) = 1.0;
  Tensor b{Shape(1, 1, 1, 1, 1)};
  Graph g;
  Var out = Conv3d(g, g.Constant(x), g.Constant(w), g.Constant(b), 1, 1);
  CHECK(MaxAbsDiff(out->value, x) == 0.0);
}

TEST_CASE("conv3d matches the naive loop oracle") {
  SplitMix64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const int s = 1 + static_cast<int>(rng.NextU64() % 2);
    const int p = static_cast<int>(rng.NextU64() % 2);
    Tensor x = RandomTensor(Shape(2, 3, 4, 4, 4), rng);
    Tensor w = RandomTensor(Shape(2, 3, 3, 3, 3), rng);
    Tensor b = RandomTensor(Shape(1, 2, 1, 1, 1), rng);
    Graph g;
    Var out = Conv3d(g, g.Constant(x), g.Constant(w), g.Constant(b), s, p);
    CHECK(MaxAbsDiff(out->value, NaiveConv3d(x, w, b, s, p)) <= 1e-6);
  }
}

TEST_CASE("conv_transpose3d broadcasts a voxel into a block") {
  Tensor x = Tensor::Scalar(2.5);
  Tensor w{Shape(1, 1, 2, 2, 2), 1.0};
  Tensor b{Shape(1, 1, 1, 1, 1)};
  Graph g;
  Var out = ConvTranspose3d(g, g.Constant(x), g.Constant(w), g.Constant(b), 2, 0);
  CHECK(out->value.shape == Shape(1, 1, 2, 2, 2));
  for (double v : out->value.v) CHECK(v == doctest::Approx(2.5));
}

TEST_CASE("conv_transpose3d matches the naive scatter oracle") {
  SplitMix64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const int s = 1 + static_cast<int>(rng.NextU64() % 2);
    Tensor x = RandomTensor(Shape(2, 2, 3, 3, 3), rng);
    Tensor w = RandomTensor(Shape(2, 3, 4, 4, 4), rng);
    Tensor b = RandomTensor(Shape(1, 3, 1, 1, 1), rng);
    Graph g;
    Var out = ConvTranspose3d(g, g.Constant(x), g.Constant(w), g.Constant(b), s, 1);
    CHECK(MaxAbsDiff(out->value, NaiveConvTranspose3d(x, w, b, s, 1)) <= 1e-6);
  }
}

TEST_CASE("conv_transpose3d is the exact adjoint of conv3d") {
  // <conv3d(x, w), y> == <x, conv_transpose3d(y, w)> for random x, y, w.
  SplitMix64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const int s = 1 + static_cast<int>(rng.NextU64() % 2);
    const int k = 2 + static_cast<int>(rng.NextU64() % 3);
    const int p = std::min(static_cast<int>(rng.NextU64() % 2), (k - 1) / 2);
    // Size with no stride remainder, so conv and its transpose are exact
    // inverse shapes.
    const int sp = k - 2 * p + 2 * s;
    Tensor x = RandomTensor(Shape(1, 2, sp, sp, sp), rng);
    Tensor w = RandomTensor(Shape(3, 2, k, k, k), rng);
    Tensor zero_b3{Shape(1, 3, 1, 1, 1)};
    Tensor zero_b2{Shape(1, 2, 1, 1, 1)};
    Graph g;
    Var cx = Conv3d(g, g.Constant(x), g.Constant(w), g.Constant(zero_b3), s, p);
    Tensor y = RandomTensor(cx->value.shape, rng);
    Var ty = ConvTranspose3d(g, g.Constant(y), g.Constant(w),
                             g.Constant(zero_b2), s, p);
    REQUIRE(ty->value.shape == x.shape);
    double lhs = 0.0, rhs = 0.0;
    for (int64_t i = 0; i < cx->value.numel(); ++i) lhs += cx->value.v[i] * y.v[i];
    for (int64_t i = 0; i < x.numel(); ++i) rhs += x.v[i] * ty->value.v[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
  }
}

TEST_CASE("gdn3d identity when beta=1 gamma=0") {
  SplitMix64 rng(5);
  Tensor x = RandomTensor(Shape(1, 3, 2, 2, 2), rng);
  Tensor beta{Shape(1, 3, 1, 1, 1), 1.0};
  Tensor gamma{Shape(3, 3, 1, 1, 1), 0.0};
  Graph g;
  Var out = Gdn3d(g, g.Constant(x), g.Constant(beta), g.Constant(gamma));
  CHECK(MaxAbsDiff(out->value, x) <= 1e-12);
}

TEST_CASE("gdn3d self-normalizes a single channel") {
  Tensor x = Tensor::Scalar(2.0);
  Tensor beta = Tensor::Scalar(1e-6);
  Tensor gamma = Tensor::Scalar(1.0);
  Graph g;
  Var out = Gdn3d(g, g.Constant(x), g.Constant(beta), g.Constant(gamma));
  CHECK(out->value.scalar() == doctest::Approx(2.0 / std::sqrt(1e-6 + 4.0)));
}

TEST_CASE("sigmoid at zero") {
  Graph g;
  Var out = Sigmoid(g, g.Constant(Tensor::Scalar(0.0)));
  CHECK(out->value.scalar() == doctest::Approx(0.5));
}

TEST_CASE("uniform noise with delta 0 is the identity") {
  SplitMix64 rng(6), noise(7);
  Tensor x = RandomTensor(Shape(1, 2, 3, 3, 3), rng);
  Graph g;
  Var out = AddUniformNoise(g, g.Constant(x), 0.0, noise);
  CHECK(MaxAbsDiff(out->value, x) == 0.0);
}

TEST_CASE("uniform noise histogram is flat (chi-square)") {
  SplitMix64 noise(8);
  const double delta = 0.5;
  const int kBins = 64;
  const int kDraws = 1000000;
  std::vector<int> hist(kBins, 0);
  Tensor x{Shape(1, 1, 100, 100, 100)};
  Graph g;
  Var out = AddUniformNoise(g, g.Constant(x), delta, noise);
  for (double v : out->value.v) {
    CHECK(v > -delta / 2);
    CHECK(v <= delta / 2);
    int bin = static_cast<int>((v / delta + 0.5) * kBins);
    bin = std::min(std::max(bin, 0), kBins - 1);
    ++hist[bin];
  }
  const double expected = static_cast<double>(kDraws) / kBins;
  double chi2 = 0.0;
  for (int c : hist) {
    chi2 += (c - expected) * (c - expected) / expected;
  }
  // 99.9th percentile of chi-square with 63 dof is ~106.
  CHECK(chi2 < 106.0);
}

TEST_CASE("backward of sum is all ones; of sum of squares is 2x") {
  SplitMix64 rng(9);
  Tensor x = RandomTensor(Shape(1, 2, 2, 2, 2), rng);
  {
    Graph g;
    Var leaf = g.Leaf(x, true);
    g.Backward(Sum(g, leaf));
    for (double gv : leaf->grad) CHECK(gv == doctest::Approx(1.0));
  }
  {
    Graph g;
    Var leaf = g.Leaf(x, true);
    g.Backward(Sum(g, Mul(g, leaf, leaf)));
    for (int64_t i = 0; i < x.numel(); ++i) {
      CHECK(leaf->grad[i] == doctest::Approx(2.0 * x.v[i]));
    }
  }
}

TEST_CASE("finite-difference checks pass for every op") {
  // The acceptance suite runs >= 5 variants; keep the unit run light.
  for (const auto& r : nvf_test::RunGradChecks(2, 0xC0FFEE)) {
    INFO(r.op);
    CHECK(r.err <= 1e-4);
  }
}

TEST_CASE("adam leaves parameters alone under zero gradient") {
  Param p(Tensor::Scalar(1.25));
  std::vector<double> zero{0.0};
  Param* params[] = {&p};
  const double* grads[] = {zero.data()};
  for (int i = 0; i < 10; ++i) {
    AdamStep(std::span<Param*>(params), std::span<const double* const>(grads),
             1e-2);
  }
  CHECK(p.value.scalar() == doctest::Approx(1.25));
}

TEST_CASE("adam moves against a constant gradient") {
  Param p(Tensor::Scalar(0.0));
  std::vector<double> grad{3.0};
  Param* params[] = {&p};
  const double* grads[] = {grad.data()};
  for (int i = 0; i < 100; ++i) {
    AdamStep(std::span<Param*>(params), std::span<const double* const>(grads),
             1e-2);
  }
  CHECK(p.value.scalar() < 0.0);
}

TEST_CASE("adam converges on a 2d quadratic bowl") {
  // f(a, b) = 2 (a - 3)^2 + 0.5 (b + 1)^2
  Param a(Tensor::Scalar(8.0)), b(Tensor::Scalar(-7.0));
  for (int step = 0; step < 5000; ++step) {
    const double ga = 4.0 * (a.value.scalar() - 3.0);
    const double gb = 1.0 * (b.value.scalar() + 1.0);
    Param* params[] = {&a, &b};
    const double ga_arr[] = {ga};
    const double gb_arr[] = {gb};
    const double* grads[] = {ga_arr, gb_arr};
    AdamStep(std::span<Param*>(params), std::span<const double* const>(grads),
             5e-3);
  }
  CHECK(std::abs(a.value.scalar() - 3.0) < 1e-3);
  CHECK(std::abs(b.value.scalar() + 1.0) < 1e-3);
}

TEST_CASE("fixed seed gives bit-identical forward and backward") {
  auto run = [](std::vector<double>* grad) {
    SplitMix64 rng(123), noise(77);
    Tensor x = RandomTensor(Shape(1, 2, 4, 4, 4), rng);
    Tensor w = RandomTensor(Shape(2, 2, 3, 3, 3), rng);
    Tensor b = RandomTensor(Shape(1, 2, 1, 1, 1), rng);
    Graph g;
    Var leaf = g.Leaf(w, true);
    Var noisy = AddUniformNoise(g, g.Constant(x), 0.5, noise);
    Var out = Conv3d(g, noisy, leaf, g.Constant(b), 1, 1);
    Var loss = Sum(g, Mul(g, out, out));
    g.Backward(loss);
    *grad = leaf->grad;
    return loss->value.scalar();
  };
  std::vector<double> g1, g2;
  const double l1 = run(&g1);
  const double l2 = run(&g2);
  CHECK(l1 == l2);  // bitwise
  CHECK(g1 == g2);
}
