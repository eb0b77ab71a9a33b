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

#include "nvf/adam.h"

#include <cmath>
#include <stdexcept>

namespace nvf {

void AdamStep(std::span<Param*> params, std::span<const double* const> grads,
              double lr, const AdamConfig& cfg) {
  if (params.size() != grads.size()) {
    throw std::logic_error("AdamStep: params/grads size mismatch");
  }
  for (size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    const double* g = grads[k];
    p.steps += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.steps));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.steps));
    const int64_t n = p.value.numel();
    for (int64_t i = 0; i < n; ++i) {
      const double gi = g[i];
      p.m.v[i] = cfg.beta1 * p.m.v[i] + (1.0 - cfg.beta1) * gi;
      p.v.v[i] = cfg.beta2 * p.v.v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = p.m.v[i] / bc1;
      const double vhat = p.v.v[i] / bc2;
      p.value.v[i] -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

}  // namespace nvf
