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

#ifndef NVF_TENSOR_H_
#define NVF_TENSOR_H_

#include <array>
#include <cassert>
#include <cstdint>
#include <vector>

namespace nvf {

// Dense rank-5 shape: (batch, channels, depth, height, width).
struct Shape {
  std::array<int64_t, 5> d{1, 1, 1, 1, 1};

  Shape() = default;
  Shape(int64_t n, int64_t c, int64_t sd, int64_t sh, int64_t sw)
      : d{n, c, sd, sh, sw} {}

  int64_t numel() const { return d[0] * d[1] * d[2] * d[3] * d[4]; }
  int64_t spatial() const { return d[2] * d[3] * d[4]; }

  friend bool operator==(const Shape& a, const Shape& b) { return a.d == b.d; }
  friend bool operator!=(const Shape& a, const Shape& b) { return a.d != b.d; }
};

// Value container. All arithmetic in the engine is double precision; the
// bitstream is the only place where 32-bit storage appears.
struct Tensor {
  Shape shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(const Shape& s) : shape(s), v(s.numel(), 0.0) {}
  Tensor(const Shape& s, double fill) : shape(s), v(s.numel(), fill) {}

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  double* data() { return v.data(); }
  const double* data() const { return v.data(); }

  double& at(int64_t n, int64_t c, int64_t sd, int64_t sh, int64_t sw) {
    return v[Index(n, c, sd, sh, sw)];
  }
  double at(int64_t n, int64_t c, int64_t sd, int64_t sh, int64_t sw) const {
    return v[Index(n, c, sd, sh, sw)];
  }

  int64_t Index(int64_t n, int64_t c, int64_t sd, int64_t sh,
                int64_t sw) const {
    assert(n < shape.d[0] && c < shape.d[1] && sd < shape.d[2] &&
           sh < shape.d[3] && sw < shape.d[4]);
    return (((n * shape.d[1] + c) * shape.d[2] + sd) * shape.d[3] + sh) *
               shape.d[4] +
           sw;
  }

  // Scalar tensors (shape 1x1x1x1x1) are used for losses and model params.
  static Tensor Scalar(double value) {
    Tensor t{Shape(1, 1, 1, 1, 1)};
    t.v[0] = value;
    return t;
  }
  double scalar() const {
    assert(numel() == 1);
    return v[0];
  }
};

}  // namespace nvf

#endif  // NVF_TENSOR_H_
