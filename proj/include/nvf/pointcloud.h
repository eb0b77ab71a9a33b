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

#ifndef NVF_POINTCLOUD_H_
#define NVF_POINTCLOUD_H_

#include <array>
#include <string>
#include <vector>

#include "nvf/common.h"

namespace nvf {

// A voxelized geometry-only point cloud. Points are kept sorted and unique
// (set semantics); every coordinate lies in [0, 2^bit_depth - 1].
struct PointCloud {
  std::vector<Vec3i> points;
  int bit_depth = 0;

  size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  // Sorts, deduplicates, and validates the coordinate range.
  void Normalize();

  friend bool operator==(const PointCloud& a, const PointCloud& b) {
    return a.bit_depth == b.bit_depth && a.points == b.points;
  }
};

enum class PlyFormat { kAscii, kBinaryLittleEndian };

// Reads x/y/z positions from an ASCII or binary_little_endian PLY file.
// Coordinates must already be integers in [0, 2^bit_depth - 1]; pass
// allow_voxelize to quantize raw (real) coordinates instead. bit_depth < 0
// infers the smallest depth that covers the data.
PointCloud ReadPly(const std::string& path, int bit_depth = -1,
                   bool allow_voxelize = false);

void WritePly(const PointCloud& pc, const std::string& path, PlyFormat format);

// Maps raw real coordinates onto the [0, 2^bit_depth)^3 voxel grid with one
// uniform scale across axes and flooring, then deduplicates. Inputs that are
// already integers inside the grid pass through unchanged.
PointCloud Voxelize(const std::vector<std::array<double, 3>>& raw_points,
                    int bit_depth);

}  // namespace nvf

#endif  // NVF_POINTCLOUD_H_
