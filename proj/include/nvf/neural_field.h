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

#ifndef NVF_NEURAL_FIELD_H_
#define NVF_NEURAL_FIELD_H_

#include <cstdint>
#include <string>
#include <vector>

#include "nvf/adam.h"
#include "nvf/graph.h"
#include "nvf/tensor.h"

namespace nvf {

// Generator hyperparameters. The cube generator upsamples a (J, 2^L, 2^L,
// 2^L) latent through N - L transposed-conv stages (kernel 4, stride 2,
// padding 1) to (2^N)^3, with a 3x3x3 refinement conv after every stage
// except the last two and sigmoid 1x1x1 heads at the last three resolutions.
// widths[i] is the channel count after stage i.
struct Architecture {
  int N = 5;
  int L = 1;
  int J = 4;
  std::vector<int> widths;

  int stages() const { return N - L; }
  int cube_side() const { return 1 << N; }
  int latent_side() const { return 1 << L; }

  static Architecture MakeDefault(int N, int L, int J);
  void Validate() const;
};

// One cube-generator layer; `upsample` marks transposed convolutions.
struct LayerSpec {
  std::string name;
  bool upsample = false;
  int in_ch = 0;
  int out_ch = 0;
  int kernel = 0;
  int stride = 1;
  int padding = 0;
};

// Cube-generator layers in canonical (coded) order: per stage the
// upsampling conv, then the optional refinement conv; heads last
// (head3, head2, head1). This order fixes the flattened layout of y.
std::vector<LayerSpec> CubeGeneratorLayers(const Architecture& arch);

// Fixed pseudo-random initialization for a layer list: Kaiming-normal
// weights (std = sqrt(2 / fan_in), fan_in = in_ch * kernel^3), zero biases.
// Tensor order: weight then bias per layer. Reproducible from (arch, seed).
std::vector<Tensor> KaimingInit(const Architecture& arch, uint64_t seed);

// Trainable state for the whole model. Effective cube-generator weights are
// w = p + y, recomputed on the fly and never stored.
struct NeuralFieldParams {
  Architecture arch;
  std::vector<Tensor> p;   // fixed init, same order as CubeGeneratorLayers
  std::vector<Param> y;    // coded residuals, zero-initialized
  // Latent code generator (1x1 conv + 3D GDN); trained but never coded.
  Param latent_conv_w;
  Param latent_conv_b;
  Param gdn_beta_raw;
  Param gdn_gamma_raw;

  // When false, p is all zeros and y carries the raw weights (the coded
  // tensor starts at the random initialization).
  bool init_separation = true;

  static NeuralFieldParams Create(const Architecture& arch,
                                  bool init_separation);
  int64_t CodedParameterCount() const;
};

enum class LatentMode { kTrain, kExport };

struct CubeGeneratorOutputs {
  Var p1 = nullptr;  // (B, 1, 2^N, ...)
  Var p2 = nullptr;  // (B, 1, 2^(N-1), ...)
  Var p3 = nullptr;  // (B, 1, 2^(N-2), ...)
};

// z from v: 1x1 conv + 3D GDN, then additive U(-1/2, 1/2) noise in training
// or hard rounding at export. `v` is (B, J, 2^L, 2^L, 2^L).
Var LatentCodeGenerator(Graph& g, Var v, Var conv_w, Var conv_b, Var beta_raw,
                        Var gamma_raw, LatentMode mode, SplitMix64* rng);

// Runs the cube generator given effective weight variables in layer order
// (weight, bias per layer, as produced by CubeGeneratorLayers).
CubeGeneratorOutputs RunCubeGenerator(Graph& g, const Architecture& arch,
                                      Var z, const std::vector<Var>& weights);

// Decode-side forward pass: probabilities at full scale from plain tensors.
// Encoder-side reconstruction uses this same path so both sides binarize
// identical values.
Tensor GenerateProbabilities(const Architecture& arch,
                             const std::vector<Tensor>& effective_weights,
                             const Tensor& z);

// The ordered flat view of y that gets quantized and coded: layer order,
// then row-major order inside each tensor. Excludes latent-generator
// parameters.
std::vector<double> FlattenCodedParameters(const NeuralFieldParams& params);

}  // namespace nvf

#endif  // NVF_NEURAL_FIELD_H_
