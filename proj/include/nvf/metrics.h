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

#ifndef NVF_METRICS_H_
#define NVF_METRICS_H_

#include <cstdint>
#include <vector>

#include "nvf/common.h"
#include "nvf/pointcloud.h"

namespace nvf {

// Exact nearest-neighbor queries over integer voxel coordinates. Squared
// distances are exact int64 arithmetic, so results match brute force
// bit-for-bit.
class VoxelKdTree {
 public:
  explicit VoxelKdTree(const std::vector<Vec3i>& points);
  int64_t NearestSquaredDistance(const Vec3i& q) const;

 private:
  struct KdNode {
    Vec3i point;
    int axis = 0;
    int32_t left = -1;
    int32_t right = -1;
  };
  int32_t Build(int lo, int hi, int depth);
  void Search(int32_t node, const Vec3i& q, int64_t* best) const;

  std::vector<Vec3i> pts_;
  std::vector<KdNode> nodes_;
  int32_t root_ = -1;
};

struct D1Report {
  double mse_a_to_b = 0.0;
  double mse_b_to_a = 0.0;
  double psnr_a_to_b = 0.0;   // +inf when the direction is exact
  double psnr_b_to_a = 0.0;
  double psnr_symmetric = 0.0;  // from the worse (larger) MSE
  double peak = 0.0;
};

// Point-to-point (D1) PSNR between two clouds. peak defaults to
// 2^bit_depth - 1 when <= 0. With the standard 3p^2 convention,
// PSNR = 10 log10(3 peak^2 / mse); pass peak_3x = false for p^2.
D1Report D1Psnr(const PointCloud& a, const PointCloud& b, double peak = 0.0,
                bool peak_3x = true);

// Total stream bits divided by total input points across frames.
double BitsPerPoint(size_t stream_bytes,
                    const std::vector<PointCloud>& frames);

}  // namespace nvf

#endif  // NVF_METRICS_H_
