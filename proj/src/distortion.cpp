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

#include "nvf/distortion.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "nvf/parallel.h"

namespace nvf {

namespace {

constexpr int64_t kInfDist = int64_t{1} << 20;  // larger than any grid span

int64_t FloorDiv(int64_t a, int64_t b) {
  int64_t q = a / b;
  if (a % b != 0 && ((a < 0) != (b < 0))) --q;
  return q;
}

// One pass of the exact lower-envelope distance transform along a strided
// input line: d[i] = min_j (i - j)^2 + f[j * stride]. The output buffer d is
// dense (length m). Integer arithmetic throughout.
void EnvelopeLine(const int64_t* f, int64_t stride, int64_t m, int64_t* d,
                  int64_t* s, int64_t* t, int64_t* frow) {
  for (int64_t i = 0; i < m; ++i) frow[i] = f[i * stride];
  auto F = [&](int64_t x, int64_t i) { return (x - i) * (x - i) + frow[i]; };
  int64_t q = 0;
  s[0] = 0;
  t[0] = 0;
  for (int64_t u = 1; u < m; ++u) {
    while (q >= 0 && F(t[q], s[q]) > F(t[q], u)) --q;
    if (q < 0) {
      q = 0;
      s[0] = u;
      t[0] = 0;
    } else {
      const int64_t i = s[q];
      const int64_t w =
          1 + FloorDiv(u * u - i * i + frow[u] - frow[i], 2 * (u - i));
      if (w < m) {
        ++q;
        s[q] = u;
        t[q] = w;
      }
    }
  }
  for (int64_t u = m - 1; u >= 0; --u) {
    d[u] = F(u, s[q]);
    if (u == t[q]) --q;
  }
}

}  // namespace

std::vector<Tensor> ComputeDistanceFields(const PointCloud& pc,
                                          const ShallowOctree& tree,
                                          const std::vector<CubeGrid>& cubes) {
  if (pc.empty()) throw DataError("ComputeDistanceFields: empty point cloud");
  if (cubes.size() != tree.leaf_count()) {
    throw DataError("ComputeDistanceFields: cube/leaf count mismatch");
  }
  const int side = 1 << tree.cube_levels_n();

  // Work on the bounding box of all non-empty cube extents; every occupied
  // voxel and every queried voxel lies inside, so distances stay global.
  Vec3i lo{std::numeric_limits<int32_t>::max(),
           std::numeric_limits<int32_t>::max(),
           std::numeric_limits<int32_t>::max()};
  Vec3i hi{0, 0, 0};
  for (const CubeGrid& c : cubes) {
    lo.x = std::min(lo.x, c.origin.x);
    lo.y = std::min(lo.y, c.origin.y);
    lo.z = std::min(lo.z, c.origin.z);
    hi.x = std::max(hi.x, c.origin.x + side);
    hi.y = std::max(hi.y, c.origin.y + side);
    hi.z = std::max(hi.z, c.origin.z + side);
  }
  const int64_t dx = hi.x - lo.x, dy = hi.y - lo.y, dz = hi.z - lo.z;
  const int64_t vol = dx * dy * dz;
  std::vector<int64_t> dist(static_cast<size_t>(vol));
  auto at = [&](int64_t x, int64_t y, int64_t z) -> int64_t& {
    return dist[(x * dy + y) * dz + z];
  };

  // Pass 1 (z axis): squared distance to the nearest occupied voxel in the
  // same z column, via two linear scans.
  std::fill(dist.begin(), dist.end(), kInfDist);
  for (const Vec3i& p : pc.points) {
    at(p.x - lo.x, p.y - lo.y, p.z - lo.z) = 0;
  }
  ParallelFor(dx * dy, [&](int64_t b, int64_t e) {
    for (int64_t xy = b; xy < e; ++xy) {
      int64_t* col = dist.data() + xy * dz;
      for (int64_t z = 1; z < dz; ++z) {
        col[z] = std::min(col[z], col[z - 1] + 1);
      }
      for (int64_t z = dz - 2; z >= 0; --z) {
        col[z] = std::min(col[z], col[z + 1] + 1);
      }
      for (int64_t z = 0; z < dz; ++z) {
        col[z] = std::min(col[z] * col[z], kInfDist * kInfDist);
      }
    }
  });

  // Pass 2 (y axis), pass 3 (x axis): exact lower-envelope minimization of
  // (i - j)^2 + f[j] along each line.
  ParallelFor(dx, [&](int64_t b, int64_t e) {
    std::vector<int64_t> d(dy), s(dy), t(dy), frow(dy);
    for (int64_t x = b; x < e; ++x) {
      for (int64_t z = 0; z < dz; ++z) {
        int64_t* base = dist.data() + (x * dy) * dz + z;
        EnvelopeLine(base, dz, dy, d.data(), s.data(), t.data(), frow.data());
        for (int64_t y = 0; y < dy; ++y) base[y * dz] = d[y];
      }
    }
  });
  ParallelFor(dy, [&](int64_t b, int64_t e) {
    std::vector<int64_t> d(dx), s(dx), t(dx), frow(dx);
    for (int64_t y = b; y < e; ++y) {
      for (int64_t z = 0; z < dz; ++z) {
        int64_t* base = dist.data() + y * dz + z;
        EnvelopeLine(base, dy * dz, dx, d.data(), s.data(), t.data(),
                     frow.data());
        for (int64_t x = 0; x < dx; ++x) base[x * dy * dz] = d[x];
      }
    }
  });

  std::vector<Tensor> fields;
  fields.reserve(cubes.size());
  for (const CubeGrid& c : cubes) {
    Tensor field{Shape(1, 1, side, side, side)};
    for (int x = 0; x < side; ++x) {
      for (int y = 0; y < side; ++y) {
        for (int z = 0; z < side; ++z) {
          const int64_t sq = at(c.origin.x - lo.x + x, c.origin.y - lo.y + y,
                                c.origin.z - lo.z + z);
          field.at(0, 0, x, y, z) = std::sqrt(static_cast<double>(sq));
        }
      }
    }
    fields.push_back(std::move(field));
  }
  return fields;
}

namespace {

double PowGamma(double x, double gamma) {
  if (gamma == 0.0) return 1.0;
  if (gamma == 1.0) return x;
  if (gamma == 2.0) return x * x;
  return std::pow(x, gamma);
}

}  // namespace

Var FocalLoss(Graph& g, Var probabilities, const Tensor& ground_truth,
              const Tensor& weight, double alpha, double gamma) {
  const Tensor& p = probabilities->value;
  if (p.shape != ground_truth.shape) {
    throw std::invalid_argument("FocalLoss: P/G shape mismatch");
  }
  const bool weighted = !weight.v.empty();
  if (weighted && weight.shape != p.shape) {
    throw std::invalid_argument("FocalLoss: weight shape mismatch");
  }
  const int64_t n = p.numel();

  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const bool occ = ground_truth.v[i] != 0.0;
    const double f = occ ? p.v[i] : 1.0 - p.v[i];
    const double a = occ ? alpha : 1.0 - alpha;
    const double w = weighted ? weight.v[i] : 1.0;
    total -= a * PowGamma(1.0 - f, gamma) * w * std::log(std::max(f, 1e-12));
  }

  Tensor gt_copy = ground_truth;
  Tensor w_copy = weight;
  return g.Emit(
      Tensor::Scalar(total), {probabilities},
      [probabilities, gt = std::move(gt_copy), wt = std::move(w_copy), alpha,
       gamma, weighted, n](Node& self) {
        if (!probabilities->requires_grad) return;
        probabilities->EnsureGrad();
        const double go = self.grad[0];
        for (int64_t i = 0; i < n; ++i) {
          const bool occ = gt.v[i] != 0.0;
          const double f = occ ? probabilities->value.v[i]
                               : 1.0 - probabilities->value.v[i];
          const double a = occ ? alpha : 1.0 - alpha;
          const double w = weighted ? wt.v[i] : 1.0;
          const double one_mf = 1.0 - f;
          double term1 = 0.0;
          if (gamma > 0.0 && one_mf > 1e-15) {
            term1 = gamma * PowGamma(one_mf, gamma - 1.0) *
                    std::log(std::max(f, 1e-12));
          }
          const double term2 = PowGamma(one_mf, gamma) / std::max(f, 1e-12);
          const double dl_df = a * w * (term1 - term2);
          probabilities->grad[i] += go * (occ ? dl_df : -dl_df);
        }
      });
}

Tensor DownsampleOccupancy(const Tensor& grid) {
  const Shape& s = grid.shape;
  if (s.d[2] % 2 != 0 || s.d[3] % 2 != 0 || s.d[4] % 2 != 0) {
    throw std::invalid_argument("DownsampleOccupancy: odd spatial size");
  }
  Tensor out{Shape(s.d[0], s.d[1], s.d[2] / 2, s.d[3] / 2, s.d[4] / 2)};
  for (int64_t b = 0; b < s.d[0]; ++b) {
    for (int64_t c = 0; c < s.d[1]; ++c) {
      for (int64_t x = 0; x < s.d[2] / 2; ++x) {
        for (int64_t y = 0; y < s.d[3] / 2; ++y) {
          for (int64_t z = 0; z < s.d[4] / 2; ++z) {
            double occ = 0.0;
            for (int i = 0; i < 8 && occ == 0.0; ++i) {
              occ = grid.at(b, c, 2 * x + (i >> 2), 2 * y + ((i >> 1) & 1),
                            2 * z + (i & 1)) != 0.0
                        ? 1.0
                        : 0.0;
            }
            out.at(b, c, x, y, z) = occ;
          }
        }
      }
    }
  }
  return out;
}

Tensor DistanceWeights(const Tensor& distance, const LossConfig& cfg) {
  Tensor w = distance;
  if (!cfg.raw_distance_weight) {
    for (double& v : w.v) v = std::max(v, 1.0);
  }
  return w;
}

Var MultiscaleDistortion(Graph& g, Var p1, Var p2, Var p3, const Tensor& g1,
                         const Tensor& g2, const Tensor& g3,
                         const Tensor& distance, const LossConfig& cfg) {
  const Tensor w1 = DistanceWeights(distance, cfg);
  Var l1 = FocalLoss(g, p1, g1, w1, cfg.alpha, cfg.gamma_focal);
  Var l2 = FocalLoss(g, p2, g2, Tensor{}, cfg.alpha, cfg.gamma_focal);
  Var l3 = FocalLoss(g, p3, g3, Tensor{}, cfg.alpha, cfg.gamma_focal);
  return Add(g, l1, Add(g, l2, l3));
}

}  // namespace nvf
