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

// Independent oracles for the unit and acceptance suites. Everything here is
// deliberately naive (nested loops, O(n^2) scans) and stays independent of
// the implementation paths it checks.

#ifndef NVF_TESTS_TEST_UTIL_H_
#define NVF_TESTS_TEST_UTIL_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "nvf/common.h"
#include "nvf/pointcloud.h"
#include "nvf/rng.h"
#include "nvf/tensor.h"

namespace nvf_test {

using nvf::PointCloud;
using nvf::Shape;
using nvf::SplitMix64;
using nvf::Tensor;
using nvf::Vec3i;

inline Tensor RandomTensor(const Shape& s, SplitMix64& rng, double scale = 1.0) {
  Tensor t{s};
  for (double& v : t.v) v = rng.NextGaussian() * scale;
  return t;
}

// Plain six-nested-loop cross-correlation.
inline Tensor NaiveConv3d(const Tensor& x, const Tensor& w, const Tensor& b,
                          int stride, int pad) {
  const int64_t B = x.shape.d[0], Ci = x.shape.d[1];
  const int64_t D = x.shape.d[2], H = x.shape.d[3], W = x.shape.d[4];
  const int64_t Co = w.shape.d[0], K = w.shape.d[2];
  const int64_t OD = (D + 2 * pad - K) / stride + 1;
  const int64_t OH = (H + 2 * pad - K) / stride + 1;
  const int64_t OW = (W + 2 * pad - K) / stride + 1;
  Tensor out{Shape(B, Co, OD, OH, OW)};
  for (int64_t n = 0; n < B; ++n)
    for (int64_t oc = 0; oc < Co; ++oc)
      for (int64_t od = 0; od < OD; ++od)
        for (int64_t oh = 0; oh < OH; ++oh)
          for (int64_t ow = 0; ow < OW; ++ow) {
            double acc = b.v[oc];
            for (int64_t ic = 0; ic < Ci; ++ic)
              for (int64_t kd = 0; kd < K; ++kd)
                for (int64_t kh = 0; kh < K; ++kh)
                  for (int64_t kw = 0; kw < K; ++kw) {
                    const int64_t id = od * stride - pad + kd;
                    const int64_t ih = oh * stride - pad + kh;
                    const int64_t iw = ow * stride - pad + kw;
                    if (id < 0 || id >= D || ih < 0 || ih >= H || iw < 0 ||
                        iw >= W)
                      continue;
                    acc += x.at(n, ic, id, ih, iw) * w.at(oc, ic, kd, kh, kw);
                  }
            out.at(n, oc, od, oh, ow) = acc;
          }
  return out;
}

// Scatter-style transposed convolution; w layout (Ci, Co, K, K, K).
inline Tensor NaiveConvTranspose3d(const Tensor& x, const Tensor& w,
                                   const Tensor& b, int stride, int pad) {
  const int64_t B = x.shape.d[0], Ci = x.shape.d[1];
  const int64_t D = x.shape.d[2], H = x.shape.d[3], W = x.shape.d[4];
  const int64_t Co = w.shape.d[1], K = w.shape.d[2];
  const int64_t OD = (D - 1) * stride - 2 * pad + K;
  const int64_t OH = (H - 1) * stride - 2 * pad + K;
  const int64_t OW = (W - 1) * stride - 2 * pad + K;
  Tensor out{Shape(B, Co, OD, OH, OW)};
  for (int64_t n = 0; n < B; ++n)
    for (int64_t oc = 0; oc < Co; ++oc)
      for (int64_t i = 0; i < OD * OH * OW; ++i)
        out.v[(n * Co + oc) * OD * OH * OW + i] = b.v[oc];
  for (int64_t n = 0; n < B; ++n)
    for (int64_t ic = 0; ic < Ci; ++ic)
      for (int64_t id = 0; id < D; ++id)
        for (int64_t ih = 0; ih < H; ++ih)
          for (int64_t iw = 0; iw < W; ++iw)
            for (int64_t oc = 0; oc < Co; ++oc)
              for (int64_t kd = 0; kd < K; ++kd)
                for (int64_t kh = 0; kh < K; ++kh)
                  for (int64_t kw = 0; kw < K; ++kw) {
                    const int64_t od = id * stride - pad + kd;
                    const int64_t oh = ih * stride - pad + kh;
                    const int64_t ow = iw * stride - pad + kw;
                    if (od < 0 || od >= OD || oh < 0 || oh >= OH || ow < 0 ||
                        ow >= OW)
                      continue;
                    out.at(n, oc, od, oh, ow) +=
                        x.at(n, ic, id, ih, iw) * w.at(ic, oc, kd, kh, kw);
                  }
  return out;
}

inline double MaxAbsDiff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(a.v[i] - b.v[i]));
  return m;
}

// Central finite differences of a scalar function against an analytic
// gradient, on a sample of elements. Returns the worst relative error.
// `f` must be a pure function of the probed tensor (re-seeded internally if
// it draws noise).
inline double FiniteDifferenceError(
    Tensor& probe, const std::vector<double>& analytic_grad,
    const std::function<double()>& f, int max_probes = 24,
    double h_scale = 1e-5) {
  SplitMix64 pick(0xFD);
  const int64_t n = probe.numel();
  double worst = 0.0;
  const int probes = static_cast<int>(std::min<int64_t>(n, max_probes));
  for (int k = 0; k < probes; ++k) {
    const int64_t i = probes == n ? k : static_cast<int64_t>(pick.NextU64() % n);
    const double x0 = probe.v[i];
    const double h = h_scale * std::max(1.0, std::abs(x0));
    probe.v[i] = x0 + h;
    const double fp = f();
    probe.v[i] = x0 - h;
    const double fm = f();
    probe.v[i] = x0;
    const double fd = (fp - fm) / (2.0 * h);
    const double ana = analytic_grad[i];
    const double scale = std::max({std::abs(fd), std::abs(ana), 1.0});
    worst = std::max(worst, std::abs(fd - ana) / scale);
  }
  return worst;
}

// O(n^2) nearest-neighbor MSE, the oracle for the D1 metric.
inline double BruteForceMse(const PointCloud& from, const PointCloud& to) {
  int64_t sum = 0;
  for (const Vec3i& a : from.points) {
    int64_t best = INT64_MAX;
    for (const Vec3i& b : to.points) {
      const int64_t dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    sum += best;
  }
  return static_cast<double>(sum) / static_cast<double>(from.size());
}

inline PointCloud RandomCloud(int bit_depth, size_t count, SplitMix64& rng) {
  PointCloud pc;
  pc.bit_depth = bit_depth;
  const uint32_t side = 1u << bit_depth;
  for (size_t i = 0; i < count; ++i) {
    pc.points.push_back(
        Vec3i{static_cast<int32_t>(rng.NextU64() % side),
              static_cast<int32_t>(rng.NextU64() % side),
              static_cast<int32_t>(rng.NextU64() % side)});
  }
  pc.Normalize();
  return pc;
}

// Dense voxel shell |dist(center) - radius| <= 0.5, the synthetic fixture
// for overfit runs.
inline PointCloud SphereShellCloud(int bit_depth, double radius,
                                   double cx = -1.0) {
  PointCloud pc;
  pc.bit_depth = bit_depth;
  const int side = 1 << bit_depth;
  const double c = cx < 0.0 ? side / 2.0 : cx;
  const int lo = std::max(0, static_cast<int>(c - radius - 2.0));
  const int hi = std::min(side - 1, static_cast<int>(c + radius + 2.0));
  for (int x = lo; x <= hi; ++x)
    for (int y = lo; y <= hi; ++y)
      for (int z = lo; z <= hi; ++z) {
        const double dx = x - c, dy = y - c, dz = z - c;
        const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
        if (std::abs(d - radius) <= 0.5) {
          pc.points.push_back(Vec3i{x, y, z});
        }
      }
  pc.Normalize();
  return pc;
}

}  // namespace nvf_test

#endif  // NVF_TESTS_TEST_UTIL_H_
