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

#ifndef NVF_ADAM_H_
#define NVF_ADAM_H_

#include <cstdint>
#include <span>
#include <vector>

#include "nvf/tensor.h"

namespace nvf {

// A trainable tensor with its own Adam moment buffers. Parameters that are
// absent from a step (e.g. latents of cubes outside the batch) keep their
// moments and step count untouched, so bias correction stays per-parameter.
struct Param {
  Tensor value;
  Tensor m;
  Tensor v;
  int64_t steps = 0;

  Param() = default;
  explicit Param(const Shape& s) : value(s), m(s), v(s) {}
  explicit Param(Tensor init)
      : value(std::move(init)), m(value.shape), v(value.shape) {}
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// One first/second-moment update with bias correction for each (param, grad)
// pair. Grad spans must match the parameter sizes.
void AdamStep(std::span<Param*> params, std::span<const double* const> grads,
              double lr, const AdamConfig& cfg = {});

}  // namespace nvf

#endif  // NVF_ADAM_H_
