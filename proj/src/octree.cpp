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

#include "nvf/octree.h"

#include <algorithm>
#include <stdexcept>
#include <unordered_map>

namespace nvf {

namespace {

// Morton code of a level-M node, child index 4x+2y+z, x highest.
uint32_t MortonCode(int32_t x, int32_t y, int32_t z, int levels) {
  uint32_t code = 0;
  for (int i = levels - 1; i >= 0; --i) {
    const uint32_t cx = (static_cast<uint32_t>(x) >> i) & 1u;
    const uint32_t cy = (static_cast<uint32_t>(y) >> i) & 1u;
    const uint32_t cz = (static_cast<uint32_t>(z) >> i) & 1u;
    code = (code << 3) | (cx << 2) | (cy << 1) | cz;
  }
  return code;
}

Vec3i MortonDecode(uint32_t code, int levels) {
  Vec3i v;
  for (int i = 0; i < levels; ++i) {
    v.x |= static_cast<int32_t>((code >> (3 * i + 2)) & 1u) << i;
    v.y |= static_cast<int32_t>((code >> (3 * i + 1)) & 1u) << i;
    v.z |= static_cast<int32_t>((code >> (3 * i + 0)) & 1u) << i;
  }
  return v;
}

}  // namespace

ShallowOctree::ShallowOctree(int depth_m, int cube_levels_n,
                             std::vector<uint32_t> leaf_codes)
    : depth_m_(depth_m),
      cube_levels_n_(cube_levels_n),
      leaf_codes_(std::move(leaf_codes)) {}

std::vector<Vec3i> ShallowOctree::LeafOrigins() const {
  std::vector<Vec3i> origins;
  origins.reserve(leaf_codes_.size());
  for (uint32_t code : leaf_codes_) {
    Vec3i v = MortonDecode(code, depth_m_);
    origins.push_back(Vec3i{v.x << cube_levels_n_, v.y << cube_levels_n_,
                            v.z << cube_levels_n_});
  }
  return origins;
}

size_t ShallowOctree::SerializedBitCount() const {
  // One byte per occupied node over levels 0..M-1.
  size_t nodes = 0;
  std::vector<uint32_t> level = leaf_codes_;
  for (int l = depth_m_; l > 0; --l) {
    for (auto& c : level) c >>= 3;
    level.erase(std::unique(level.begin(), level.end()), level.end());
    nodes += level.size();
  }
  return nodes * 8;
}

std::vector<uint8_t> ShallowOctree::SerializeBfs() const {
  std::vector<uint8_t> out;
  if (depth_m_ == 0) return out;

  // levels[l] = occupied codes at level l, ascending (== BFS order).
  std::vector<std::vector<uint32_t>> levels(depth_m_ + 1);
  levels[depth_m_] = leaf_codes_;
  for (int l = depth_m_ - 1; l >= 0; --l) {
    levels[l] = levels[l + 1];
    for (auto& c : levels[l]) c >>= 3;
    levels[l].erase(std::unique(levels[l].begin(), levels[l].end()),
                    levels[l].end());
  }

  for (int l = 0; l < depth_m_; ++l) {
    const auto& children = levels[l + 1];
    size_t ci = 0;
    for (uint32_t node : levels[l]) {
      uint8_t byte = 0;
      for (int c = 0; c < 8; ++c) {
        const uint32_t child = (node << 3) | static_cast<uint32_t>(c);
        if (ci < children.size() && children[ci] == child) {
          byte |= static_cast<uint8_t>(1u << (7 - c));  // child 0 = MSB
          ++ci;
        }
      }
      out.push_back(byte);
    }
  }
  return out;
}

ShallowOctree ShallowOctree::DeserializeBfs(const std::vector<uint8_t>& bytes,
                                            size_t bit_count, int depth_m,
                                            int cube_levels_n) {
  if (bit_count % 8 != 0) {
    throw DecodeError("octree bit count not a multiple of 8");
  }
  const size_t byte_count = bit_count / 8;
  if (byte_count > bytes.size()) {
    throw DecodeError("octree bit-string truncated");
  }
  if (depth_m == 0) {
    if (byte_count != 0) throw DecodeError("octree bits present for M=0");
    return ShallowOctree(0, cube_levels_n, {0});
  }

  size_t pos = 0;
  std::vector<uint32_t> current{0};
  for (int l = 0; l < depth_m; ++l) {
    std::vector<uint32_t> next;
    for (uint32_t node : current) {
      if (pos >= byte_count) throw DecodeError("octree bit-string truncated");
      const uint8_t byte = bytes[pos++];
      for (int c = 0; c < 8; ++c) {
        if (byte & (1u << (7 - c))) {
          next.push_back((node << 3) | static_cast<uint32_t>(c));
        }
      }
    }
    if (next.empty()) throw DecodeError("octree has an empty level");
    current = std::move(next);
  }
  if (pos != byte_count) throw DecodeError("octree bit-string overlong");
  return ShallowOctree(depth_m, cube_levels_n, std::move(current));
}

std::pair<ShallowOctree, std::vector<CubeGrid>> BuildOctree(
    const PointCloud& pc, int depth_m, int cube_levels_n) {
  if (pc.bit_depth != depth_m + cube_levels_n) {
    throw DataError("bit depth " + std::to_string(pc.bit_depth) +
                    " does not equal M + N = " +
                    std::to_string(depth_m + cube_levels_n));
  }
  if (pc.empty()) throw DataError("BuildOctree: empty point cloud");
  if (depth_m < 0 || cube_levels_n < 0 || depth_m > 10 || cube_levels_n > 10) {
    throw DataError("BuildOctree: M and N must be in [0, 10]");
  }

  std::vector<uint32_t> codes;
  codes.reserve(pc.points.size());
  for (const Vec3i& p : pc.points) {
    codes.push_back(MortonCode(p.x >> cube_levels_n, p.y >> cube_levels_n,
                               p.z >> cube_levels_n, depth_m));
  }
  std::vector<uint32_t> leaves = codes;
  std::sort(leaves.begin(), leaves.end());
  leaves.erase(std::unique(leaves.begin(), leaves.end()), leaves.end());

  std::unordered_map<uint32_t, size_t> index_of;
  index_of.reserve(leaves.size());
  for (size_t i = 0; i < leaves.size(); ++i) index_of.emplace(leaves[i], i);

  const int side = 1 << cube_levels_n;
  const int32_t mask = side - 1;
  ShallowOctree tree(depth_m, cube_levels_n, std::move(leaves));
  std::vector<CubeGrid> cubes(tree.leaf_count());
  const std::vector<Vec3i> origins = tree.LeafOrigins();
  for (size_t i = 0; i < cubes.size(); ++i) {
    cubes[i].side = side;
    cubes[i].origin = origins[i];
    cubes[i].occupancy.assign(static_cast<size_t>(side) * side * side, 0);
  }
  for (size_t i = 0; i < pc.points.size(); ++i) {
    const Vec3i& p = pc.points[i];
    CubeGrid& cube = cubes[index_of.at(codes[i])];
    cube.Set(p.x & mask, p.y & mask, p.z & mask);
  }
  return {std::move(tree), std::move(cubes)};
}

PointCloud ReconstructFromCubes(const ShallowOctree& tree,
                                const std::vector<CubeGrid>& cubes) {
  if (cubes.size() != tree.leaf_count()) {
    throw DataError("cube count " + std::to_string(cubes.size()) +
                    " does not match leaf count " +
                    std::to_string(tree.leaf_count()));
  }
  PointCloud pc;
  pc.bit_depth = tree.depth_m() + tree.cube_levels_n();
  for (const CubeGrid& cube : cubes) {
    for (int x = 0; x < cube.side; ++x) {
      for (int y = 0; y < cube.side; ++y) {
        for (int z = 0; z < cube.side; ++z) {
          if (cube.Occupied(x, y, z)) {
            pc.points.push_back(Vec3i{cube.origin.x + x, cube.origin.y + y,
                                      cube.origin.z + z});
          }
        }
      }
    }
  }
  pc.Normalize();
  return pc;
}

}  // namespace nvf
