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

#ifndef NVF_GRAPH_H_
#define NVF_GRAPH_H_

#include <functional>
#include <memory>
#include <vector>

#include "nvf/rng.h"
#include "nvf/tensor.h"

namespace nvf {

// One recorded value in the computation tape. Nodes are created through
// Graph and the op functions below; the tape order is the topological order.
struct Node {
  Tensor value;
  std::vector<double> grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::vector<Node*> parents;
  // Accumulates into parents' grads; reads this->grad and this->value.
  std::function<void(Node&)> backward_fn;

  void EnsureGrad() {
    if (grad.size() != value.v.size()) grad.assign(value.v.size(), 0.0);
  }
};

using Var = Node*;

// Records a forward pass and runs reverse-mode accumulation over it. One
// graph instance per training step; single-threaded recording.
class Graph {
 public:
  // Leaf holding a copy of `t`. Gradients for leaves with requires_grad are
  // read back by the optimizer after Backward().
  Var Leaf(const Tensor& t, bool requires_grad);
  // Convenience for non-trainable inputs.
  Var Constant(const Tensor& t) { return Leaf(t, false); }

  // Internal: ops call this to append a result node.
  Var Emit(Tensor value, std::vector<Var> parents,
           std::function<void(Node&)> backward_fn);

  // Populates grad buffers of every requires_grad node reachable from loss.
  // `loss` must be scalar.
  void Backward(Var loss);

  size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::unique_ptr<Node>> nodes_;
};

// ---- Operators ----------------------------------------------------------

// Dense 3D cross-correlation. x: (B, Ci, D, H, W), w: (Co, Ci, K, K, K),
// b: (1, Co, 1, 1, 1). Output spatial size floor((S + 2p - K) / stride) + 1.
Var Conv3d(Graph& g, Var x, Var w, Var b, int stride, int padding);

// Transposed 3D convolution, the adjoint of Conv3d. x: (B, Ci, D, H, W),
// w: (Ci, Co, K, K, K), b: (1, Co, 1, 1, 1). Output size
// (S - 1) * stride - 2p + K.
Var ConvTranspose3d(Graph& g, Var x, Var w, Var b, int stride, int padding);

// Generalized divisive normalization, y_c = x_c / sqrt(beta_c + sum_j
// gamma_{c,j} x_j^2) per voxel. beta: (1, C, 1, 1, 1), gamma: (C, C, 1, 1, 1).
// Callers keep beta and gamma positive (see SoftplusFloor).
Var Gdn3d(Graph& g, Var x, Var beta, Var gamma);

Var Add(Graph& g, Var a, Var b);
Var Sub(Graph& g, Var a, Var b);
Var Mul(Graph& g, Var a, Var b);
Var Scale(Graph& g, Var a, double s);
Var Relu(Graph& g, Var a);
Var Sigmoid(Graph& g, Var a);
// softplus(x) + floor; keeps reparameterized GDN weights strictly positive.
Var SoftplusFloor(Graph& g, Var a, double floor);
Var Sum(Graph& g, Var a);  // scalar output

// Adds i.i.d. U(-delta/2, delta/2) noise drawn from `rng` at record time.
// Backward treats the noise as a constant (identity gradient).
Var AddUniformNoise(Graph& g, Var x, double delta, SplitMix64& rng);

// Concatenates along the batch axis; inputs must agree on all other dims.
Var Stack(Graph& g, const std::vector<Var>& xs);

}  // namespace nvf

#endif  // NVF_GRAPH_H_
