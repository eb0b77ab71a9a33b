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

#ifndef NVF_RNG_H_
#define NVF_RNG_H_

#include <cmath>
#include <cstdint>

namespace nvf {

// SplitMix64. Every draw sequence in the codec (weight init, training noise)
// comes from this generator so that a decoder can reproduce the fixed
// initialization tensors bit-exactly from the seed alone.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t NextU64() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double NextUnit() {
    return static_cast<double>(NextU64() >> 11) * 0x1.0p-53;
  }

  // Uniform in (-half, half].
  double NextUniform(double half) {
    return (1.0 - 2.0 * NextUnit()) * half;
  }

  // Standard normal via Box-Muller; consumes exactly two draws.
  double NextGaussian() {
    double u1 = static_cast<double>((NextU64() >> 11) + 1) * 0x1.0p-53;  // (0,1]
    double u2 = NextUnit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Derives an independent stream for a sub-purpose.
  SplitMix64 Split(uint64_t stream_id) {
    SplitMix64 mix(state_ ^ (0xA0761D6478BD642Full * (stream_id + 1)));
    mix.NextU64();
    return mix;
  }

 private:
  uint64_t state_;
};

// Seed for the fixed pseudo-random initialization tensors. Changing it breaks
// compatibility with every previously written bitstream.
inline constexpr uint64_t kParamInitSeed = 0x6E76665F696E6974ull;  // "nvf_init"

}  // namespace nvf

#endif  // NVF_RNG_H_
