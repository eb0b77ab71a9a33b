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

#ifndef NVF_DISTORTION_H_
#define NVF_DISTORTION_H_

#include <vector>

#include "nvf/graph.h"
#include "nvf/octree.h"
#include "nvf/pointcloud.h"
#include "nvf/tensor.h"

namespace nvf {

struct LossConfig {
  double lambda = 1.0;
  double alpha = 0.5;        // weight of occupied voxels; empties get 1-alpha
  double gamma_focal = 2.0;
  // Eq-style raw D_i weights (zero on occupied voxels) instead of the
  // max(D_i, 1) floor; exposed for ablation.
  bool raw_distance_weight = false;
};

// Per-cube Euclidean distances (voxel units) from each voxel center to the
// nearest occupied voxel anywhere in the cloud. Zero exactly on occupied
// voxels; >= 1 on empty ones.
// Shape of each tensor: (1, 1, side, side, side).
std::vector<Tensor> ComputeDistanceFields(const PointCloud& pc,
                                          const ShallowOctree& tree,
                                          const std::vector<CubeGrid>& cubes);

// -sum_i alpha_i (1-F_i)^gamma W_i log F_i with F_i = P_i for occupied and
// 1 - P_i for empty voxels. `weight` is optional (pass empty tensor for the
// plain focal loss); gradients flow to P only.
Var FocalLoss(Graph& g, Var probabilities, const Tensor& ground_truth,
              const Tensor& weight, double alpha, double gamma);

// OR-pooling by 2 along each spatial axis; a parent voxel is occupied iff
// any of its 8 children is.
Tensor DownsampleOccupancy(const Tensor& grid);

// Distance-weighted focal loss at full resolution plus plain focal losses at
// the two downsampled scales.
Var MultiscaleDistortion(Graph& g, Var p1, Var p2, Var p3, const Tensor& g1,
                         const Tensor& g2, const Tensor& g3,
                         const Tensor& distance, const LossConfig& cfg);

// W_i used at full scale: max(D_i, 1), or raw D_i when configured.
Tensor DistanceWeights(const Tensor& distance, const LossConfig& cfg);

}  // namespace nvf

#endif  // NVF_DISTORTION_H_
