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

#include "nvf/metrics.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace nvf {

namespace {

int64_t SquaredDistance(const Vec3i& a, const Vec3i& b) {
  const int64_t dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

int32_t AxisValue(const Vec3i& p, int axis) {
  return axis == 0 ? p.x : (axis == 1 ? p.y : p.z);
}

}  // namespace

VoxelKdTree::VoxelKdTree(const std::vector<Vec3i>& points) : pts_(points) {
  if (pts_.empty()) throw DataError("VoxelKdTree: empty point set");
  nodes_.reserve(pts_.size());
  root_ = Build(0, static_cast<int>(pts_.size()), 0);
}

int32_t VoxelKdTree::Build(int lo, int hi, int depth) {
  if (lo >= hi) return -1;
  const int axis = depth % 3;
  const int mid = (lo + hi) / 2;
  std::nth_element(pts_.begin() + lo, pts_.begin() + mid, pts_.begin() + hi,
                   [axis](const Vec3i& a, const Vec3i& b) {
                     return AxisValue(a, axis) < AxisValue(b, axis);
                   });
  KdNode node;
  node.point = pts_[mid];
  node.axis = axis;
  const int32_t id = static_cast<int32_t>(nodes_.size());
  nodes_.push_back(node);
  const int32_t left = Build(lo, mid, depth + 1);
  const int32_t right = Build(mid + 1, hi, depth + 1);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void VoxelKdTree::Search(int32_t id, const Vec3i& q, int64_t* best) const {
  if (id < 0) return;
  const KdNode& node = nodes_[id];
  *best = std::min(*best, SquaredDistance(node.point, q));
  const int64_t diff = AxisValue(q, node.axis) - AxisValue(node.point, node.axis);
  const int32_t near = diff < 0 ? node.left : node.right;
  const int32_t far = diff < 0 ? node.right : node.left;
  Search(near, q, best);
  if (diff * diff < *best) Search(far, q, best);
}

int64_t VoxelKdTree::NearestSquaredDistance(const Vec3i& q) const {
  int64_t best = std::numeric_limits<int64_t>::max();
  Search(root_, q, &best);
  return best;
}

namespace {

// Sum of squared NN distances from each point of `from` to the set `to`,
// exact in int64.
int64_t SumSquaredNn(const PointCloud& from, const VoxelKdTree& to) {
  int64_t sum = 0;
  for (const Vec3i& p : from.points) sum += to.NearestSquaredDistance(p);
  return sum;
}

double PsnrFromMse(double mse, double peak, bool peak_3x) {
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  const double num = (peak_3x ? 3.0 : 1.0) * peak * peak;
  return 10.0 * std::log10(num / mse);
}

}  // namespace

D1Report D1Psnr(const PointCloud& a, const PointCloud& b, double peak,
                bool peak_3x) {
  if (a.empty() || b.empty()) throw DataError("D1Psnr: empty point cloud");
  if (peak <= 0.0) {
    peak = static_cast<double>((1 << std::max(a.bit_depth, b.bit_depth)) - 1);
  }
  const VoxelKdTree tree_a(a.points);
  const VoxelKdTree tree_b(b.points);

  D1Report r;
  r.peak = peak;
  r.mse_a_to_b =
      static_cast<double>(SumSquaredNn(a, tree_b)) / static_cast<double>(a.size());
  r.mse_b_to_a =
      static_cast<double>(SumSquaredNn(b, tree_a)) / static_cast<double>(b.size());
  r.psnr_a_to_b = PsnrFromMse(r.mse_a_to_b, peak, peak_3x);
  r.psnr_b_to_a = PsnrFromMse(r.mse_b_to_a, peak, peak_3x);
  r.psnr_symmetric =
      PsnrFromMse(std::max(r.mse_a_to_b, r.mse_b_to_a), peak, peak_3x);
  return r;
}

double BitsPerPoint(size_t stream_bytes,
                    const std::vector<PointCloud>& frames) {
  size_t points = 0;
  for (const PointCloud& f : frames) points += f.size();
  if (points == 0) throw DataError("BitsPerPoint: no points");
  return static_cast<double>(stream_bytes * 8) / static_cast<double>(points);
}

}  // namespace nvf
