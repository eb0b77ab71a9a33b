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

#ifndef NVF_RATE_MODEL_H_
#define NVF_RATE_MODEL_H_

#include <cstdint>
#include <vector>

#include "nvf/graph.h"
#include "nvf/tensor.h"

namespace nvf {

// Quantization steps are fixed properties of the format.
inline constexpr double kDeltaLatent = 1.0;
inline constexpr double kDeltaParam = 1.0 / 16.0;

// Transmitted distribution parameters, one Gaussian for all latents and one
// for all coded network parameters. Stored as 32-bit floats in the header.
struct GaussianModelParams {
  float mu_z = 0.0f;
  float sigma_z = 1.0f;
  float mu_y = 0.0f;
  float sigma_y = 1.0f;
};

// Probability that a Gaussian(mu, sigma) sample falls in the width-delta bin
// centered at value. Clamped below at 2^-64 for coding stability.
double BinProbability(double value, double mu, double sigma, double delta);

// Sum of -ln q(v_i) over the tensor, the differentiable rate surrogate.
// mu and log_sigma are scalar graph variables; gradients flow to values, mu,
// and log_sigma. Unlike BinProbability this does not clamp, so the gradient
// stays informative in far tails.
Var GaussianRateNll(Graph& g, Var values, Var mu, Var log_sigma, double delta);

// round(value / delta) with halfway cases away from zero; encoder and decoder
// share this rule.
int64_t QuantizeIndex(double value, double delta);
Tensor QuantizeTensor(const Tensor& values, double delta);
inline double Dequantize(int64_t index, double delta) {
  return static_cast<double>(index) * delta;
}

// Probabilities over integer bins [index_lo, index_hi], evaluated at bin
// centers index*delta with the tail mass folded into the extreme bins.
// Deterministic given (mu, sigma) as 32-bit floats.
std::vector<double> DiscretePmfTable(float mu, float sigma, double delta,
                                     int64_t index_lo, int64_t index_hi);

// Index range the coder uses for a given model; a pure function of the
// 32-bit header floats so encoder and decoder derive identical tables.
// Covers +-16 sigma around the mean, clamped to [-2^15, 2^15 - 1] and to at
// most 4097 bins.
void DefaultIndexRange(float mu, float sigma, double delta, int64_t* lo,
                       int64_t* hi);

}  // namespace nvf

#endif  // NVF_RATE_MODEL_H_
