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

#ifndef NVF_OCTREE_H_
#define NVF_OCTREE_H_

#include <cstdint>
#include <utility>
#include <vector>

#include "nvf/pointcloud.h"

namespace nvf {

// Binary occupancy block for one non-empty octree leaf. Voxel (x, y, z)
// relative to `origin` lives at occupancy[(x * side + y) * side + z].
struct CubeGrid {
  int side = 0;
  Vec3i origin;
  std::vector<uint8_t> occupancy;

  bool Occupied(int x, int y, int z) const {
    return occupancy[(static_cast<size_t>(x) * side + y) * side + z] != 0;
  }
  void Set(int x, int y, int z) {
    occupancy[(static_cast<size_t>(x) * side + y) * side + z] = 1;
  }
};

// The first M levels of the occupancy octree over a depth-(M+N) grid.
// Occupied nodes per level are kept in BFS order, which for a level-by-level
// expansion with child index 4x+2y+z coincides with ascending Morton order.
// The BFS rank of a leaf is the canonical cube index.
class ShallowOctree {
 public:
  ShallowOctree() = default;
  ShallowOctree(int depth_m, int cube_levels_n,
                std::vector<uint32_t> leaf_codes);

  int depth_m() const { return depth_m_; }
  int cube_levels_n() const { return cube_levels_n_; }
  size_t leaf_count() const { return leaf_codes_.size(); }

  // Origins of non-empty leaves in cube-index order (multiples of 2^N).
  std::vector<Vec3i> LeafOrigins() const;

  // Child order inside each byte: child 0 (index 4x+2y+z) is the MSB. One
  // byte per occupied node over levels 0..M-1, BFS order.
  std::vector<uint8_t> SerializeBfs() const;
  size_t SerializedBitCount() const;

  static ShallowOctree DeserializeBfs(const std::vector<uint8_t>& bytes,
                                      size_t bit_count, int depth_m,
                                      int cube_levels_n);

  friend bool operator==(const ShallowOctree& a, const ShallowOctree& b) {
    return a.depth_m_ == b.depth_m_ && a.cube_levels_n_ == b.cube_levels_n_ &&
           a.leaf_codes_ == b.leaf_codes_;
  }

 private:
  int depth_m_ = 0;
  int cube_levels_n_ = 0;
  // Morton codes (3*M bits) of occupied level-M nodes, ascending.
  std::vector<uint32_t> leaf_codes_;
};

// Splits pc (depth M+N) into the shallow octree and one cube per non-empty
// leaf, in cube-index order. The cubes partition the input exactly.
std::pair<ShallowOctree, std::vector<CubeGrid>> BuildOctree(
    const PointCloud& pc, int depth_m, int cube_levels_n);

// Exact inverse of BuildOctree given the ground-truth cubes.
PointCloud ReconstructFromCubes(const ShallowOctree& tree,
                                const std::vector<CubeGrid>& cubes);

}  // namespace nvf

#endif  // NVF_OCTREE_H_
