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

#include "nvf/neural_field.h"

#include <cmath>
#include <stdexcept>

#include "nvf/common.h"
#include "nvf/rate_model.h"

namespace nvf {

namespace {

constexpr double kGdnFloor = 1e-6;

// softplus^-1, for initializing reparameterized GDN weights.
double InverseSoftplus(double y) { return std::log(std::expm1(y)); }

}  // namespace

Architecture Architecture::MakeDefault(int N, int L, int J) {
  Architecture arch;
  arch.N = N;
  arch.L = L;
  arch.J = J;
  const int s = arch.stages();
  for (int i = 0; i < s; ++i) {
    arch.widths.push_back(i < s - 2 ? 16 : 8);
  }
  arch.Validate();
  return arch;
}

void Architecture::Validate() const {
  if (N < 3 || N > 10) throw DataError("architecture: N must be in [3, 10]");
  if (L < 0 || L >= N) throw DataError("architecture: L must satisfy 0 <= L < N");
  if (N - L < 3) {
    throw DataError("architecture: need at least 3 upsampling stages (L <= N - 3)");
  }
  if (J < 1 || J > 64) throw DataError("architecture: J must be in [1, 64]");
  if (static_cast<int>(widths.size()) != stages()) {
    throw DataError("architecture: widths count must equal N - L");
  }
  for (int w : widths) {
    if (w < 1 || w > 256) throw DataError("architecture: widths must be in [1, 256]");
  }
}

std::vector<LayerSpec> CubeGeneratorLayers(const Architecture& arch) {
  arch.Validate();
  const int s = arch.stages();
  std::vector<LayerSpec> layers;
  for (int i = 0; i < s; ++i) {
    LayerSpec up;
    up.name = "up" + std::to_string(i);
    up.upsample = true;
    up.in_ch = i == 0 ? arch.J : arch.widths[i - 1];
    up.out_ch = arch.widths[i];
    up.kernel = 4;
    up.stride = 2;
    up.padding = 1;
    layers.push_back(up);
    if (i < s - 2) {
      LayerSpec ref;
      ref.name = "ref" + std::to_string(i);
      ref.in_ch = arch.widths[i];
      ref.out_ch = arch.widths[i];
      ref.kernel = 3;
      ref.stride = 1;
      ref.padding = 1;
      layers.push_back(ref);
    }
  }
  for (int h = 3; h >= 1; --h) {
    LayerSpec head;
    head.name = "head" + std::to_string(h);
    head.in_ch = arch.widths[s - h];
    head.out_ch = 1;
    head.kernel = 1;
    head.stride = 1;
    head.padding = 0;
    layers.push_back(head);
  }
  return layers;
}

std::vector<Tensor> KaimingInit(const Architecture& arch, uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<Tensor> tensors;
  for (const LayerSpec& l : CubeGeneratorLayers(arch)) {
    const Shape ws = l.upsample
                         ? Shape(l.in_ch, l.out_ch, l.kernel, l.kernel, l.kernel)
                         : Shape(l.out_ch, l.in_ch, l.kernel, l.kernel, l.kernel);
    const double fan_in =
        static_cast<double>(l.in_ch) * l.kernel * l.kernel * l.kernel;
    const double std_dev = std::sqrt(2.0 / fan_in);
    Tensor w{ws};
    for (double& v : w.v) v = rng.NextGaussian() * std_dev;
    tensors.push_back(std::move(w));
    tensors.emplace_back(Shape(1, l.out_ch, 1, 1, 1));  // zero bias
  }
  return tensors;
}

NeuralFieldParams NeuralFieldParams::Create(const Architecture& arch,
                                            bool init_separation) {
  NeuralFieldParams params;
  params.arch = arch;
  params.init_separation = init_separation;
  std::vector<Tensor> init = KaimingInit(arch, kParamInitSeed);
  for (Tensor& t : init) {
    if (init_separation) {
      params.y.emplace_back(Param(Shape(t.shape)));  // zeros
      params.p.push_back(std::move(t));
    } else {
      // Coded tensor carries the raw weights; the fixed offset is zero.
      params.p.emplace_back(t.shape);
      params.y.emplace_back(Param(std::move(t)));
    }
  }

  SplitMix64 rng = SplitMix64(kParamInitSeed).Split(0x4C47);  // latent gen
  Tensor conv_w{Shape(arch.J, arch.J, 1, 1, 1)};
  const double std_dev = std::sqrt(2.0 / arch.J);
  for (double& v : conv_w.v) v = rng.NextGaussian() * std_dev;
  params.latent_conv_w = Param(std::move(conv_w));
  params.latent_conv_b = Param(Shape(1, arch.J, 1, 1, 1));

  Tensor beta{Shape(1, arch.J, 1, 1, 1), InverseSoftplus(1.0)};
  params.gdn_beta_raw = Param(std::move(beta));
  // Identity-dominated gamma: 0.1 on the diagonal, ~floor elsewhere.
  Tensor gamma{Shape(arch.J, arch.J, 1, 1, 1), InverseSoftplus(kGdnFloor)};
  for (int j = 0; j < arch.J; ++j) {
    gamma.v[static_cast<size_t>(j) * arch.J + j] = InverseSoftplus(0.1);
  }
  params.gdn_gamma_raw = Param(std::move(gamma));
  return params;
}

int64_t NeuralFieldParams::CodedParameterCount() const {
  int64_t n = 0;
  for (const Param& t : y) n += t.value.numel();
  return n;
}

Var LatentCodeGenerator(Graph& g, Var v, Var conv_w, Var conv_b, Var beta_raw,
                        Var gamma_raw, LatentMode mode, SplitMix64* rng) {
  Var pre = Conv3d(g, v, conv_w, conv_b, 1, 0);
  Var beta = SoftplusFloor(g, beta_raw, kGdnFloor);
  Var gamma = SoftplusFloor(g, gamma_raw, kGdnFloor);
  Var z = Gdn3d(g, pre, beta, gamma);
  if (mode == LatentMode::kTrain) {
    if (rng == nullptr) {
      throw std::invalid_argument("LatentCodeGenerator: train mode needs rng");
    }
    return AddUniformNoise(g, z, kDeltaLatent, *rng);
  }
  return g.Constant(QuantizeTensor(z->value, kDeltaLatent));
}

CubeGeneratorOutputs RunCubeGenerator(Graph& g, const Architecture& arch,
                                      Var z, const std::vector<Var>& weights) {
  const std::vector<LayerSpec> layers = CubeGeneratorLayers(arch);
  if (weights.size() != 2 * layers.size()) {
    throw std::invalid_argument("RunCubeGenerator: weight count mismatch");
  }
  const int s = arch.stages();

  // taps[i] = pre-activation features at resolution 2^(L+1+i).
  std::vector<Var> taps(s, nullptr);
  Var x = z;
  size_t li = 0;
  for (int i = 0; i < s; ++i) {
    const LayerSpec& up = layers[li];
    Var t = ConvTranspose3d(g, x, weights[2 * li], weights[2 * li + 1],
                            up.stride, up.padding);
    ++li;
    if (i < s - 2) {
      Var a = Relu(g, t);
      Var r = Conv3d(g, a, weights[2 * li], weights[2 * li + 1], 1,
                     layers[li].padding);
      ++li;
      taps[i] = r;
      x = Relu(g, r);
    } else {
      taps[i] = t;
      x = Relu(g, t);
    }
  }

  CubeGeneratorOutputs out;
  // Heads follow the stages in layer order: head3, head2, head1.
  Var h3 = Conv3d(g, taps[s - 3], weights[2 * li], weights[2 * li + 1], 1, 0);
  out.p3 = Sigmoid(g, h3);
  ++li;
  Var h2 = Conv3d(g, taps[s - 2], weights[2 * li], weights[2 * li + 1], 1, 0);
  out.p2 = Sigmoid(g, h2);
  ++li;
  Var h1 = Conv3d(g, taps[s - 1], weights[2 * li], weights[2 * li + 1], 1, 0);
  out.p1 = Sigmoid(g, h1);
  return out;
}

Tensor GenerateProbabilities(const Architecture& arch,
                             const std::vector<Tensor>& effective_weights,
                             const Tensor& z) {
  Graph g;
  std::vector<Var> weights;
  weights.reserve(effective_weights.size());
  for (const Tensor& t : effective_weights) weights.push_back(g.Constant(t));
  CubeGeneratorOutputs out = RunCubeGenerator(g, arch, g.Constant(z), weights);
  return out.p1->value;
}

std::vector<double> FlattenCodedParameters(const NeuralFieldParams& params) {
  std::vector<double> flat;
  for (const Param& t : params.y) {
    flat.insert(flat.end(), t.value.v.begin(), t.value.v.end());
  }
  return flat;
}

}  // namespace nvf
