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

#include "nvf/graph.h"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <stdexcept>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#endif

#include "nvf/parallel.h"

namespace nvf {

Var Graph::Leaf(const Tensor& t, bool requires_grad) {
  auto node = std::make_unique<Node>();
  node->value = t;
  node->requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return nodes_.back().get();
}

Var Graph::Emit(Tensor value, std::vector<Var> parents,
                std::function<void(Node&)> backward_fn) {
  auto node = std::make_unique<Node>();
  node->value = std::move(value);
  node->parents = std::move(parents);
  for (Var p : node->parents) {
    if (p->requires_grad) {
      node->requires_grad = true;
      break;
    }
  }
  if (node->requires_grad) node->backward_fn = std::move(backward_fn);
  nodes_.push_back(std::move(node));
  return nodes_.back().get();
}

void Graph::Backward(Var loss) {
  if (loss->value.numel() != 1) {
    throw std::logic_error("Backward: loss must be scalar");
  }
  loss->EnsureGrad();
  loss->grad[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (!n.requires_grad || n.grad.empty() || !n.backward_fn) continue;
    n.backward_fn(n);
  }
}

namespace {

void AccumulateBias(const Shape& go_shape, const std::vector<double>& go,
                    Node* b) {
  if (!b->requires_grad) return;
  b->EnsureGrad();
  const int64_t B = go_shape.d[0], C = go_shape.d[1], S = go_shape.spatial();
  for (int64_t n = 0; n < B; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const double* g = go.data() + (n * C + c) * S;
      double acc = 0.0;
      for (int64_t i = 0; i < S; ++i) acc += g[i];
      b->grad[c] += acc;
    }
  }
}

// Per-kernel-offset row descriptors, computed once per kernel invocation so
// the inner loops carry no divisions. For gather rows of the form
// acc[dst] += src_row[dst * stride - pad + k] * w, the valid destination
// range is [dst_start, dst_hi) with the source starting at src_start.
struct GatherTap {
  int k;
  int64_t dst_start;
  int64_t src_start;
  int64_t dst_hi;  // exclusive, stride-1 fast path bound
};

inline void BuildGatherTaps(int k_size, int stride, int pad, int64_t src_size,
                            int64_t dst_size, std::vector<GatherTap>* taps) {
  taps->clear();
  for (int k = 0; k < k_size; ++k) {
    GatherTap t;
    t.k = k;
    int64_t src = -pad + k;
    int64_t dst = 0;
    if (src < 0) {
      dst = (-src + stride - 1) / stride;
      src += dst * stride;
    }
    if (dst >= dst_size || src >= src_size) continue;
    t.dst_start = dst;
    t.src_start = src;
    const int64_t steps = std::min(
        dst_size - dst, (src_size - src + stride - 1) / stride);
    t.dst_hi = dst + steps;
    taps->push_back(t);
  }
}

// Parity-class rows for the transposed conv forward: ow = q * stride + c,
// iw = q + off; q in [q_lo, q_hi) within class c whose packed accumulator
// starts at class_off[c].
struct ClassTap {
  int k;
  int64_t c;
  int64_t off;
  int64_t q_lo;
  int64_t q_hi;
};

inline void BuildClassTaps(int k_size, int stride, int pad, int64_t src_size,
                           int64_t dst_size,
                           const std::vector<int64_t>& class_off,
                           std::vector<ClassTap>* taps) {
  taps->clear();
  for (int k = 0; k < k_size; ++k) {
    ClassTap t;
    t.k = k;
    t.c = ((k - pad) % stride + stride) % stride;
    if (t.c >= dst_size) continue;
    t.off = (t.c + pad - k) / stride;
    const int64_t n_c = class_off[t.c + 1] - class_off[t.c];
    t.q_lo = std::max<int64_t>(0, -t.off);
    t.q_hi = std::min<int64_t>(n_c, src_size - t.off);
    if (t.q_lo >= t.q_hi) continue;
    taps->push_back(t);
  }
}


// Four-lane partial-sum dot product. The lane split fixes the summation
// order, so results are identical on every run and thread count.
#if defined(__AVX2__) && defined(__FMA__)
inline double ShiftedDot(const double* a, const double* b, int64_t n) {
  __m256d acc = _mm256_setzero_pd();
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + tail;
}

// acc[i] += a[i] * wv over a contiguous run.
inline void AxpyRun(double* acc, const double* a, double wv, int64_t n) {
  const __m256d w4 = _mm256_set1_pd(wv);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(
        acc + i,
        _mm256_fmadd_pd(_mm256_loadu_pd(a + i), w4, _mm256_loadu_pd(acc + i)));
  }
  for (; i < n; ++i) acc[i] += a[i] * wv;
}
#else
inline double ShiftedDot(const double* a, const double* b, int64_t n) {
  double l0 = 0.0, l1 = 0.0, l2 = 0.0, l3 = 0.0;
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    l0 += a[i] * b[i];
    l1 += a[i + 1] * b[i + 1];
    l2 += a[i + 2] * b[i + 2];
    l3 += a[i + 3] * b[i + 3];
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((l0 + l1) + (l2 + l3)) + tail;
}

inline void AxpyRun(double* acc, const double* a, double wv, int64_t n) {
  for (int64_t i = 0; i < n; ++i) acc[i] += a[i] * wv;
}
#endif


struct ConvDims {
  int64_t B, Ci, Co, D, H, W, OD, OH, OW;
  int K, stride, pad;
};

// Kernel-tap bounds so that src = dst * stride - pad + k stays in [0, size).
inline void TapBounds(int64_t dst, int stride, int pad, int k_size,
                      int64_t src_size, int* klo, int* khi, int64_t* src0) {
  *src0 = dst * stride - pad;
  *klo = static_cast<int>(std::max<int64_t>(0, -*src0));
  *khi = static_cast<int>(std::min<int64_t>(k_size, src_size - *src0));
}

// All conv kernels parallelize over slabs owned by exactly one task and keep
// a fixed accumulation order per element, so results do not depend on the
// thread count.

template <int KT>
void Conv3dForward(const Tensor& x, const Tensor& w, const Tensor& b,
                   const ConvDims& cd, Tensor* out) {
  const int K = KT > 0 ? KT : cd.K;
  const int64_t xs = cd.D * cd.H * cd.W;
  const int64_t os = cd.OD * cd.OH * cd.OW;
  const int64_t ks = static_cast<int64_t>(K) * K * K;
  std::vector<GatherTap> wtaps;
  BuildGatherTaps(K, cd.stride, cd.pad, cd.W, cd.OW, &wtaps);
  // AXPY row form: acc[ow] += x_row[ow * s - p + kw] * w, contiguous
  // accumulator, no divisions inside.
  ParallelFor(cd.B * cd.Co, [&](int64_t lo, int64_t hi) {
    std::vector<double> acc(cd.OW);
    for (int64_t bc = lo; bc < hi; ++bc) {
      const int64_t n = bc / cd.Co, oc = bc % cd.Co;
      double* op = out->data() + (n * cd.Co + oc) * os;
      const double bias = b.v[oc];
      for (int64_t od = 0; od < cd.OD; ++od) {
        const int64_t id0 = od * cd.stride - cd.pad;
        const int kd_lo = static_cast<int>(std::max<int64_t>(0, -id0));
        const int kd_hi = static_cast<int>(std::min<int64_t>(K, cd.D - id0));
        for (int64_t oh = 0; oh < cd.OH; ++oh) {
          const int64_t ih0 = oh * cd.stride - cd.pad;
          const int kh_lo = static_cast<int>(std::max<int64_t>(0, -ih0));
          const int kh_hi = static_cast<int>(std::min<int64_t>(K, cd.H - ih0));
          std::fill(acc.begin(), acc.end(), bias);
          for (int64_t ic = 0; ic < cd.Ci; ++ic) {
            const double* xc = x.data() + (n * cd.Ci + ic) * xs;
            const double* wc = w.data() + (oc * cd.Ci + ic) * ks;
            for (int kd = kd_lo; kd < kd_hi; ++kd) {
              const double* xd = xc + (id0 + kd) * cd.H * cd.W;
              for (int kh = kh_lo; kh < kh_hi; ++kh) {
                const double* x_row = xd + (ih0 + kh) * cd.W;
                const double* w_row =
                    wc + (static_cast<int64_t>(kd) * K + kh) * K;
                for (const GatherTap& t : wtaps) {
                  const double wv = w_row[t.k];
                  if (cd.stride == 1) {
                    AxpyRun(acc.data() + t.dst_start,
                            x_row + t.src_start, wv,
                            t.dst_hi - t.dst_start);
                  } else {
                    int64_t iw = t.src_start;
                    for (int64_t ow = t.dst_start; ow < t.dst_hi;
                         ++ow, iw += cd.stride) {
                      acc[ow] += x_row[iw] * wv;
                    }
                  }
                }
              }
            }
          }
          std::memcpy(op + (od * cd.OH + oh) * cd.OW, acc.data(),
                      sizeof(double) * cd.OW);
        }
      }
    }
  });
}

// gx[b][ic] slab += scatter of go against w; one task per (b, ic).
template <int KT>
void Conv3dBackwardX(const std::vector<double>& go, const Tensor& w,
                     const ConvDims& cd, Node* x) {
  const int K = KT > 0 ? KT : cd.K;
  const int64_t xs = cd.D * cd.H * cd.W;
  const int64_t os = cd.OD * cd.OH * cd.OW;
  const int64_t ks = static_cast<int64_t>(K) * K * K;
  std::vector<GatherTap> wtaps;
  BuildGatherTaps(K, cd.stride, cd.pad, cd.W, cd.OW, &wtaps);
  ParallelFor(cd.B * cd.Ci, [&](int64_t lo, int64_t hi) {
    for (int64_t bc = lo; bc < hi; ++bc) {
      const int64_t n = bc / cd.Ci, ic = bc % cd.Ci;
      double* gx = x->grad.data() + (n * cd.Ci + ic) * xs;
      for (int64_t oc = 0; oc < cd.Co; ++oc) {
        const double* gop = go.data() + (n * cd.Co + oc) * os;
        const double* wc = w.data() + (oc * cd.Ci + ic) * ks;
        for (int64_t od = 0; od < cd.OD; ++od) {
          const int64_t id0 = od * cd.stride - cd.pad;
          const int kd_lo = static_cast<int>(std::max<int64_t>(0, -id0));
          const int kd_hi = static_cast<int>(std::min<int64_t>(K, cd.D - id0));
          for (int64_t oh = 0; oh < cd.OH; ++oh) {
            const int64_t ih0 = oh * cd.stride - cd.pad;
            const int kh_lo = static_cast<int>(std::max<int64_t>(0, -ih0));
            const int kh_hi =
                static_cast<int>(std::min<int64_t>(K, cd.H - ih0));
            const double* go_row = gop + (od * cd.OH + oh) * cd.OW;
            for (int kd = kd_lo; kd < kd_hi; ++kd) {
              double* gxd = gx + (id0 + kd) * cd.H * cd.W;
              for (int kh = kh_lo; kh < kh_hi; ++kh) {
                double* gx_row = gxd + (ih0 + kh) * cd.W;
                const double* w_row =
                    wc + (static_cast<int64_t>(kd) * K + kh) * K;
                for (const GatherTap& t : wtaps) {
                  const double wv = w_row[t.k];
                  if (wv == 0.0) continue;
                  if (cd.stride == 1) {
                    AxpyRun(gx_row + t.src_start, go_row + t.dst_start, wv,
                            t.dst_hi - t.dst_start);
                  } else {
                    int64_t iw = t.src_start;
                    for (int64_t ow = t.dst_start; ow < t.dst_hi;
                         ++ow, iw += cd.stride) {
                      gx_row[iw] += go_row[ow] * wv;
                    }
                  }
                }
              }
            }
          }
        }
      }
    }
  });
}

// gw[oc][ic] kernel block accumulated locally; one task per oc.
template <int KT>
void Conv3dBackwardW(const std::vector<double>& go, const Tensor& x,
                     const ConvDims& cd, Node* w) {
  const int K = KT > 0 ? KT : cd.K;
  const int64_t xs = cd.D * cd.H * cd.W;
  const int64_t os = cd.OD * cd.OH * cd.OW;
  const int64_t ks = static_cast<int64_t>(K) * K * K;
  ParallelFor(cd.Co * cd.Ci, [&](int64_t lo, int64_t hi) {
    std::vector<double> gw_acc(ks);
    for (int64_t cc = lo; cc < hi; ++cc) {
      const int64_t oc = cc / cd.Ci, ic = cc % cd.Ci;
      std::fill(gw_acc.begin(), gw_acc.end(), 0.0);
      for (int64_t n = 0; n < cd.B; ++n) {
        const double* gop = go.data() + (n * cd.Co + oc) * os;
        const double* xc = x.data() + (n * cd.Ci + ic) * xs;
        for (int64_t od = 0; od < cd.OD; ++od) {
          const int64_t id0 = od * cd.stride - cd.pad;
          const int kd_lo = static_cast<int>(std::max<int64_t>(0, -id0));
          const int kd_hi = static_cast<int>(std::min<int64_t>(K, cd.D - id0));
          for (int64_t oh = 0; oh < cd.OH; ++oh) {
            const int64_t ih0 = oh * cd.stride - cd.pad;
            const int kh_lo = static_cast<int>(std::max<int64_t>(0, -ih0));
            const int kh_hi =
                static_cast<int>(std::min<int64_t>(K, cd.H - ih0));
            const double* go_row = gop + (od * cd.OH + oh) * cd.OW;
            for (int kd = kd_lo; kd < kd_hi; ++kd) {
              const double* xd = xc + (id0 + kd) * cd.H * cd.W;
              double* ga = gw_acc.data() + static_cast<int64_t>(kd) * K * K;
              for (int kh = kh_lo; kh < kh_hi; ++kh) {
                const double* x_row = xd + (ih0 + kh) * cd.W;
                double* gah = ga + static_cast<int64_t>(kh) * K;
                if (cd.stride == 1) {
                  // Dense shifted dot per kw: iw = ow + kw - pad.
                  for (int kw = 0; kw < K; ++kw) {
                    const int64_t sh = kw - cd.pad;
                    const int64_t ow_lo = std::max<int64_t>(0, -sh);
                    const int64_t ow_hi =
                        std::min<int64_t>(cd.OW, cd.W - sh);
                    if (ow_lo >= ow_hi) continue;
                    gah[kw] += ShiftedDot(go_row + ow_lo, x_row + ow_lo + sh,
                                          ow_hi - ow_lo);
                  }
                } else {
                  for (int kw = 0; kw < K; ++kw) {
                    const int64_t sh = kw - cd.pad;
                    double acc = 0.0;
                    for (int64_t ow = 0; ow < cd.OW; ++ow) {
                      const int64_t iw = ow * cd.stride + sh;
                      if (iw < 0 || iw >= cd.W) continue;
                      acc += go_row[ow] * x_row[iw];
                    }
                    gah[kw] += acc;
                  }
                }
              }
            }
          }
        }
      }
      double* gw = w->grad.data() + (oc * cd.Ci + ic) * ks;
      for (int64_t i = 0; i < ks; ++i) gw[i] += gw_acc[i];
    }
  });
}

// Transposed conv taps: dst = src * stride - pad + k must land in [0, size).
template <int KT>
void TConvForward(const Tensor& x, const Tensor& w, const Tensor& b,
                  const ConvDims& cd, Tensor* out) {
  const int K = KT > 0 ? KT : cd.K;
  const int64_t xs = cd.D * cd.H * cd.W;
  const int64_t os = cd.OD * cd.OH * cd.OW;
  const int64_t ks = static_cast<int64_t>(K) * K * K;
  const int S = cd.stride;
  std::vector<int64_t> class_off(S + 1, 0);
  for (int c = 0; c < S; ++c) {
    class_off[c + 1] =
        class_off[c] + (c < cd.OW ? (cd.OW - c + S - 1) / S : 0);
  }
  std::vector<ClassTap> wtaps;
  BuildClassTaps(K, S, cd.pad, cd.W, cd.OW, class_off, &wtaps);
  // Parity-split AXPY rows: outputs ow = q * S + c accumulate contiguously
  // per class.
  ParallelFor(cd.B * cd.Co, [&](int64_t lo, int64_t hi) {
    std::vector<double> acc(cd.OW);
    std::vector<std::pair<int, int64_t>> taps_d, taps_h;
    for (int64_t bc = lo; bc < hi; ++bc) {
      const int64_t n = bc / cd.Co, oc = bc % cd.Co;
      double* op = out->data() + (n * cd.Co + oc) * os;
      const double bias = b.v[oc];
      for (int64_t od = 0; od < cd.OD; ++od) {
        taps_d.clear();
        for (int kd = 0; kd < K; ++kd) {
          const int64_t num = od + cd.pad - kd;
          if (num < 0 || num % S != 0) continue;
          const int64_t id = num / S;
          if (id < cd.D) taps_d.emplace_back(kd, id);
        }
        for (int64_t oh = 0; oh < cd.OH; ++oh) {
          taps_h.clear();
          for (int kh = 0; kh < K; ++kh) {
            const int64_t num = oh + cd.pad - kh;
            if (num < 0 || num % S != 0) continue;
            const int64_t ih = num / S;
            if (ih < cd.H) taps_h.emplace_back(kh, ih);
          }
          std::fill(acc.begin(), acc.end(), 0.0);
          for (int64_t ic = 0; ic < cd.Ci; ++ic) {
            const double* xc = x.data() + (n * cd.Ci + ic) * xs;
            const double* wc = w.data() + (ic * cd.Co + oc) * ks;
            for (const auto& [kd, id] : taps_d) {
              for (const auto& [kh, ih] : taps_h) {
                const double* x_row = xc + (id * cd.H + ih) * cd.W;
                const double* w_row =
                    wc + (static_cast<int64_t>(kd) * K + kh) * K;
                for (const ClassTap& t : wtaps) {
                  AxpyRun(acc.data() + class_off[t.c] + t.q_lo,
                          x_row + t.off + t.q_lo, w_row[t.k],
                          t.q_hi - t.q_lo);
                }
              }
            }
          }
          double* o_row = op + (od * cd.OH + oh) * cd.OW;
          for (int c = 0; c < S && c < cd.OW; ++c) {
            const double* ac = acc.data() + class_off[c];
            const int64_t n_c = class_off[c + 1] - class_off[c];
            for (int64_t q = 0; q < n_c; ++q) o_row[q * S + c] = ac[q] + bias;
          }
        }
      }
    }
  });
}

// gx for the transposed conv is a plain strided correlation of go with w.
template <int KT>
void TConvBackwardX(const std::vector<double>& go, const Tensor& w,
                    const ConvDims& cd, Node* x) {
  const int K = KT > 0 ? KT : cd.K;
  const int64_t xs = cd.D * cd.H * cd.W;
  const int64_t os = cd.OD * cd.OH * cd.OW;
  const int64_t ks = static_cast<int64_t>(K) * K * K;
  const int S = cd.stride;
  const int64_t iw_lo = (cd.pad + S - 1) / S;
  const int64_t iw_hi =
      std::min<int64_t>(cd.W, (cd.OW - K + cd.pad) / S + 1);
  ParallelFor(cd.B * cd.Ci, [&](int64_t lo, int64_t hi) {
    for (int64_t bc = lo; bc < hi; ++bc) {
      const int64_t n = bc / cd.Ci, ic = bc % cd.Ci;
      double* gx = x->grad.data() + (n * cd.Ci + ic) * xs;
      for (int64_t oc = 0; oc < cd.Co; ++oc) {
        const double* gop = go.data() + (n * cd.Co + oc) * os;
        const double* wc = w.data() + (ic * cd.Co + oc) * ks;
        for (int64_t id = 0; id < cd.D; ++id) {
          const int64_t od0 = id * S - cd.pad;
          const int kd_lo = static_cast<int>(std::max<int64_t>(0, -od0));
          const int kd_hi = static_cast<int>(std::min<int64_t>(K, cd.OD - od0));
          for (int64_t ih = 0; ih < cd.H; ++ih) {
            const int64_t oh0 = ih * S - cd.pad;
            const int kh_lo = static_cast<int>(std::max<int64_t>(0, -oh0));
            const int kh_hi =
                static_cast<int>(std::min<int64_t>(K, cd.OH - oh0));
            double* gx_row = gx + (id * cd.H + ih) * cd.W;
            for (int kd = kd_lo; kd < kd_hi; ++kd) {
              const double* god = gop + (od0 + kd) * cd.OH * cd.OW;
              for (int kh = kh_lo; kh < kh_hi; ++kh) {
                const double* go_row = god + (oh0 + kh) * cd.OW;
                const double* w_row =
                    wc + (static_cast<int64_t>(kd) * K + kh) * K;
                // Left edge.
                for (int64_t iw = 0; iw < std::min<int64_t>(iw_lo, cd.W);
                     ++iw) {
                  const int64_t ow0 = iw * S - cd.pad;
                  double acc = 0.0;
                  for (int kw = 0; kw < K; ++kw) {
                    const int64_t ow = ow0 + kw;
                    if (ow >= 0 && ow < cd.OW) acc += go_row[ow] * w_row[kw];
                  }
                  gx_row[iw] += acc;
                }
                // Interior: contiguous K-run of go per input column.
                for (int64_t iw = iw_lo; iw < iw_hi; ++iw) {
                  const double* gp = go_row + iw * S - cd.pad;
                  double acc = 0.0;
                  for (int kw = 0; kw < K; ++kw) acc += gp[kw] * w_row[kw];
                  gx_row[iw] += acc;
                }
                // Right edge.
                for (int64_t iw = std::max<int64_t>(iw_hi, iw_lo); iw < cd.W;
                     ++iw) {
                  const int64_t ow0 = iw * S - cd.pad;
                  double acc = 0.0;
                  for (int kw = 0; kw < K; ++kw) {
                    const int64_t ow = ow0 + kw;
                    if (ow >= 0 && ow < cd.OW) acc += go_row[ow] * w_row[kw];
                  }
                  gx_row[iw] += acc;
                }
              }
            }
          }
        }
      }
    }
  });
}

// gw[ic][oc] kernel block accumulated locally; one task per (ic, oc).
template <int KT>
void TConvBackwardW(const std::vector<double>& go, const Tensor& x,
                    const ConvDims& cd, Node* w) {
  const int K = KT > 0 ? KT : cd.K;
  const int64_t xs = cd.D * cd.H * cd.W;
  const int64_t os = cd.OD * cd.OH * cd.OW;
  const int64_t ks = static_cast<int64_t>(K) * K * K;
  const int S = cd.stride;

  // kwacc[kw] = sum_iw x_row[iw] * go_row[iw*S - pad + kw]. With go rows
  // de-interleaved by ow parity class, every kw becomes a dense shifted dot.
  std::vector<int64_t> class_off(S + 1, 0);
  for (int c = 0; c < S; ++c) {
    class_off[c + 1] = class_off[c] + (c < cd.OW ? (cd.OW - c + S - 1) / S : 0);
  }
  struct KwTap {
    int64_t c;
    int64_t shift;  // buf index j = iw + shift
  };
  std::vector<KwTap> kw_taps(K);
  for (int kw = 0; kw < K; ++kw) {
    const int64_t c = ((kw - cd.pad) % S + S) % S;
    kw_taps[kw] = {c, (kw - cd.pad - c) / S};
  }

  // Parity-split copy of go, shared by all (ic, oc) tasks.
  std::vector<double> split;
  const double* go_split = go.data();
  if (S > 1) {
    split.resize(go.size());
    ParallelFor(cd.B * cd.Co * cd.OD * cd.OH, [&](int64_t lo, int64_t hi) {
      for (int64_t row = lo; row < hi; ++row) {
        const double* src = go.data() + row * cd.OW;
        double* dst = split.data() + row * cd.OW;
        for (int c = 0; c < S && c < cd.OW; ++c) {
          double* d = dst + class_off[c];
          int64_t j = 0;
          for (int64_t ow = c; ow < cd.OW; ow += S, ++j) d[j] = src[ow];
        }
      }
    });
    go_split = split.data();
  }

  ParallelFor(cd.Ci * cd.Co, [&](int64_t lo, int64_t hi) {
    std::vector<double> gw_acc(ks);
    for (int64_t cc = lo; cc < hi; ++cc) {
      const int64_t ic = cc / cd.Co, oc = cc % cd.Co;
      std::fill(gw_acc.begin(), gw_acc.end(), 0.0);
      for (int64_t n = 0; n < cd.B; ++n) {
        const double* xc = x.data() + (n * cd.Ci + ic) * xs;
        const double* gop = go_split + (n * cd.Co + oc) * os;
        for (int64_t id = 0; id < cd.D; ++id) {
          const int64_t od0 = id * S - cd.pad;
          const int kd_lo = static_cast<int>(std::max<int64_t>(0, -od0));
          const int kd_hi = static_cast<int>(std::min<int64_t>(K, cd.OD - od0));
          for (int64_t ih = 0; ih < cd.H; ++ih) {
            const int64_t oh0 = ih * S - cd.pad;
            const int kh_lo = static_cast<int>(std::max<int64_t>(0, -oh0));
            const int kh_hi =
                static_cast<int>(std::min<int64_t>(K, cd.OH - oh0));
            const double* x_row = xc + (id * cd.H + ih) * cd.W;
            for (int kd = kd_lo; kd < kd_hi; ++kd) {
              const double* god = gop + (od0 + kd) * cd.OH * cd.OW;
              double* ga =
                  gw_acc.data() + static_cast<int64_t>(kd) * K * K;
              for (int kh = kh_lo; kh < kh_hi; ++kh) {
                const double* go_row = god + (oh0 + kh) * cd.OW;
                double* gah = ga + static_cast<int64_t>(kh) * K;
                for (int kw = 0; kw < K; ++kw) {
                  const KwTap& t = kw_taps[kw];
                  if (t.c >= cd.OW) continue;
                  const int64_t n_c = class_off[t.c + 1] - class_off[t.c];
                  const int64_t iw_lo = std::max<int64_t>(0, -t.shift);
                  const int64_t iw_hi = std::min<int64_t>(cd.W, n_c - t.shift);
                  if (iw_lo >= iw_hi) continue;
                  const double* buf = go_row + class_off[t.c] + t.shift;
                  gah[kw] +=
                      ShiftedDot(x_row + iw_lo, buf + iw_lo, iw_hi - iw_lo);
                }
              }
            }
          }
        }
      }
      double* gw = w->grad.data() + (ic * cd.Co + oc) * ks;
      for (int64_t i = 0; i < ks; ++i) gw[i] += gw_acc[i];
    }
  });
}


// Instantiates the kernels with a compile-time kernel size so the innermost
// loops unroll; K values outside the set fall back to the generic path.
#define NVF_DISPATCH_K(fn, k, ...)      \
  switch (k) {                          \
    case 1: fn<1>(__VA_ARGS__); break;  \
    case 3: fn<3>(__VA_ARGS__); break;  \
    case 4: fn<4>(__VA_ARGS__); break;  \
    default: fn<0>(__VA_ARGS__); break; \
  }

}  // namespace

Var Conv3d(Graph& g, Var x, Var w, Var b, int stride, int padding) {
  const Shape& xs = x->value.shape;
  const Shape& ws = w->value.shape;
  if (ws.d[2] != ws.d[3] || ws.d[2] != ws.d[4]) {
    throw std::invalid_argument("Conv3d: kernel must be cubic");
  }
  if (xs.d[1] != ws.d[1]) {
    throw std::invalid_argument("Conv3d: channel mismatch");
  }
  ConvDims cd;
  cd.B = xs.d[0];
  cd.Ci = xs.d[1];
  cd.Co = ws.d[0];
  cd.D = xs.d[2];
  cd.H = xs.d[3];
  cd.W = xs.d[4];
  cd.K = static_cast<int>(ws.d[2]);
  cd.stride = stride;
  cd.pad = padding;
  cd.OD = (cd.D + 2 * padding - cd.K) / stride + 1;
  cd.OH = (cd.H + 2 * padding - cd.K) / stride + 1;
  cd.OW = (cd.W + 2 * padding - cd.K) / stride + 1;
  if (cd.OD <= 0 || cd.OH <= 0 || cd.OW <= 0) {
    throw std::invalid_argument("Conv3d: output size would be empty");
  }
  if (b->value.numel() != cd.Co) {
    throw std::invalid_argument("Conv3d: bias size mismatch");
  }

  Tensor out{Shape(cd.B, cd.Co, cd.OD, cd.OH, cd.OW)};
  NVF_DISPATCH_K(Conv3dForward, cd.K, x->value, w->value, b->value, cd, &out);

  return g.Emit(std::move(out), {x, w, b}, [x, w, b, cd](Node& self) {
    if (x->requires_grad) {
      x->EnsureGrad();
      NVF_DISPATCH_K(Conv3dBackwardX, cd.K, self.grad, w->value, cd, x);
    }
    if (w->requires_grad) {
      w->EnsureGrad();
      NVF_DISPATCH_K(Conv3dBackwardW, cd.K, self.grad, x->value, cd, w);
    }
    if (b->requires_grad) {
      AccumulateBias(self.value.shape, self.grad, b);
    }
  });
}

Var ConvTranspose3d(Graph& g, Var x, Var w, Var b, int stride, int padding) {
  const Shape& xs = x->value.shape;
  const Shape& ws = w->value.shape;
  if (ws.d[2] != ws.d[3] || ws.d[2] != ws.d[4]) {
    throw std::invalid_argument("ConvTranspose3d: kernel must be cubic");
  }
  if (xs.d[1] != ws.d[0]) {
    throw std::invalid_argument("ConvTranspose3d: channel mismatch");
  }
  ConvDims cd;
  cd.B = xs.d[0];
  cd.Ci = xs.d[1];
  cd.Co = ws.d[1];
  cd.D = xs.d[2];
  cd.H = xs.d[3];
  cd.W = xs.d[4];
  cd.K = static_cast<int>(ws.d[2]);
  cd.stride = stride;
  cd.pad = padding;
  cd.OD = (cd.D - 1) * stride - 2 * padding + cd.K;
  cd.OH = (cd.H - 1) * stride - 2 * padding + cd.K;
  cd.OW = (cd.W - 1) * stride - 2 * padding + cd.K;
  if (cd.OD <= 0 || cd.OH <= 0 || cd.OW <= 0) {
    throw std::invalid_argument("ConvTranspose3d: output size would be empty");
  }
  if (b->value.numel() != cd.Co) {
    throw std::invalid_argument("ConvTranspose3d: bias size mismatch");
  }

  Tensor out{Shape(cd.B, cd.Co, cd.OD, cd.OH, cd.OW)};
  NVF_DISPATCH_K(TConvForward, cd.K, x->value, w->value, b->value, cd, &out);

  return g.Emit(std::move(out), {x, w, b}, [x, w, b, cd](Node& self) {
    if (x->requires_grad) {
      x->EnsureGrad();
      NVF_DISPATCH_K(TConvBackwardX, cd.K, self.grad, w->value, cd, x);
    }
    if (w->requires_grad) {
      w->EnsureGrad();
      NVF_DISPATCH_K(TConvBackwardW, cd.K, self.grad, x->value, cd, w);
    }
    if (b->requires_grad) {
      AccumulateBias(self.value.shape, self.grad, b);
    }
  });
}

Var Gdn3d(Graph& g, Var x, Var beta, Var gamma) {
  const Shape& xs = x->value.shape;
  const int64_t C = xs.d[1];
  if (beta->value.numel() != C || gamma->value.shape.d[0] != C ||
      gamma->value.shape.d[1] != C) {
    throw std::invalid_argument("Gdn3d: beta/gamma shape mismatch");
  }
  const int64_t B = xs.d[0], S = xs.spatial();

  Tensor out{xs};
  for (int64_t n = 0; n < B; ++n) {
    for (int64_t i = 0; i < S; ++i) {
      for (int64_t c = 0; c < C; ++c) {
        double norm = beta->value.v[c];
        for (int64_t j = 0; j < C; ++j) {
          const double xj = x->value.v[(n * C + j) * S + i];
          norm += gamma->value.v[c * C + j] * xj * xj;
        }
        out.v[(n * C + c) * S + i] =
            x->value.v[(n * C + c) * S + i] / std::sqrt(norm);
      }
    }
  }

  return g.Emit(std::move(out), {x, beta, gamma},
                [x, beta, gamma, B, C, S](Node& self) {
    if (x->requires_grad) x->EnsureGrad();
    if (beta->requires_grad) beta->EnsureGrad();
    if (gamma->requires_grad) gamma->EnsureGrad();
    std::vector<double> r(C), go_xr3(C);
    for (int64_t n = 0; n < B; ++n) {
      for (int64_t i = 0; i < S; ++i) {
        for (int64_t c = 0; c < C; ++c) {
          double norm = beta->value.v[c];
          for (int64_t j = 0; j < C; ++j) {
            const double xj = x->value.v[(n * C + j) * S + i];
            norm += gamma->value.v[c * C + j] * xj * xj;
          }
          const double rc = 1.0 / std::sqrt(norm);
          r[c] = rc;
          go_xr3[c] = self.grad[(n * C + c) * S + i] *
                      x->value.v[(n * C + c) * S + i] * rc * rc * rc;
        }
        for (int64_t c = 0; c < C; ++c) {
          const double go_c = self.grad[(n * C + c) * S + i];
          if (beta->requires_grad) beta->grad[c] += -0.5 * go_xr3[c];
          if (gamma->requires_grad) {
            for (int64_t j = 0; j < C; ++j) {
              const double xj = x->value.v[(n * C + j) * S + i];
              gamma->grad[c * C + j] += -0.5 * go_xr3[c] * xj * xj;
            }
          }
          if (x->requires_grad) {
            double acc = go_c * r[c];
            const double xk = x->value.v[(n * C + c) * S + i];
            for (int64_t j = 0; j < C; ++j) {
              acc -= xk * go_xr3[j] * gamma->value.v[j * C + c];
            }
            x->grad[(n * C + c) * S + i] += acc;
          }
        }
      }
    }
  });
}

namespace {

void CheckSameShape(Var a, Var b, const char* op) {
  if (a->value.shape != b->value.shape) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

Var Add(Graph& g, Var a, Var b) {
  CheckSameShape(a, b, "Add");
  Tensor out{a->value.shape};
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.v[i] = a->value.v[i] + b->value.v[i];
  return g.Emit(std::move(out), {a, b}, [a, b, n](Node& self) {
    if (a->requires_grad) {
      a->EnsureGrad();
      for (int64_t i = 0; i < n; ++i) a->grad[i] += self.grad[i];
    }
    if (b->requires_grad) {
      b->EnsureGrad();
      for (int64_t i = 0; i < n; ++i) b->grad[i] += self.grad[i];
    }
  });
}

Var Sub(Graph& g, Var a, Var b) {
  CheckSameShape(a, b, "Sub");
  Tensor out{a->value.shape};
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.v[i] = a->value.v[i] - b->value.v[i];
  return g.Emit(std::move(out), {a, b}, [a, b, n](Node& self) {
    if (a->requires_grad) {
      a->EnsureGrad();
      for (int64_t i = 0; i < n; ++i) a->grad[i] += self.grad[i];
    }
    if (b->requires_grad) {
      b->EnsureGrad();
      for (int64_t i = 0; i < n; ++i) b->grad[i] -= self.grad[i];
    }
  });
}

Var Mul(Graph& g, Var a, Var b) {
  CheckSameShape(a, b, "Mul");
  Tensor out{a->value.shape};
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.v[i] = a->value.v[i] * b->value.v[i];
  return g.Emit(std::move(out), {a, b}, [a, b, n](Node& self) {
    if (a->requires_grad) {
      a->EnsureGrad();
      for (int64_t i = 0; i < n; ++i) a->grad[i] += self.grad[i] * b->value.v[i];
    }
    if (b->requires_grad) {
      b->EnsureGrad();
      for (int64_t i = 0; i < n; ++i) b->grad[i] += self.grad[i] * a->value.v[i];
    }
  });
}

Var Scale(Graph& g, Var a, double s) {
  Tensor out{a->value.shape};
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.v[i] = a->value.v[i] * s;
  return g.Emit(std::move(out), {a}, [a, s, n](Node& self) {
    if (!a->requires_grad) return;
    a->EnsureGrad();
    for (int64_t i = 0; i < n; ++i) a->grad[i] += self.grad[i] * s;
  });
}

Var Relu(Graph& g, Var a) {
  Tensor out{a->value.shape};
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i)
    out.v[i] = a->value.v[i] > 0.0 ? a->value.v[i] : 0.0;
  return g.Emit(std::move(out), {a}, [a, n](Node& self) {
    if (!a->requires_grad) return;
    a->EnsureGrad();
    for (int64_t i = 0; i < n; ++i) {
      if (a->value.v[i] > 0.0) a->grad[i] += self.grad[i];
    }
  });
}

Var Sigmoid(Graph& g, Var a) {
  Tensor out{a->value.shape};
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double v = a->value.v[i];
    out.v[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                        : std::exp(v) / (1.0 + std::exp(v));
  }
  return g.Emit(std::move(out), {a}, [a, n](Node& self) {
    if (!a->requires_grad) return;
    a->EnsureGrad();
    for (int64_t i = 0; i < n; ++i) {
      const double s = self.value.v[i];
      a->grad[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

Var SoftplusFloor(Graph& g, Var a, double floor) {
  Tensor out{a->value.shape};
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double v = a->value.v[i];
    out.v[i] = (v > 30.0 ? v : std::log1p(std::exp(v))) + floor;
  }
  return g.Emit(std::move(out), {a}, [a, n](Node& self) {
    if (!a->requires_grad) return;
    a->EnsureGrad();
    for (int64_t i = 0; i < n; ++i) {
      const double v = a->value.v[i];
      const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                : std::exp(v) / (1.0 + std::exp(v));
      a->grad[i] += self.grad[i] * s;
    }
  });
}

Var Sum(Graph& g, Var a) {
  double acc = 0.0;
  const int64_t n = a->value.numel();
  for (int64_t i = 0; i < n; ++i) acc += a->value.v[i];
  return g.Emit(Tensor::Scalar(acc), {a}, [a, n](Node& self) {
    if (!a->requires_grad) return;
    a->EnsureGrad();
    const double go = self.grad[0];
    for (int64_t i = 0; i < n; ++i) a->grad[i] += go;
  });
}

Var AddUniformNoise(Graph& g, Var x, double delta, SplitMix64& rng) {
  Tensor out{x->value.shape};
  const int64_t n = out.numel();
  const double half = delta * 0.5;
  for (int64_t i = 0; i < n; ++i) {
    out.v[i] = x->value.v[i] + (delta == 0.0 ? 0.0 : rng.NextUniform(half));
  }
  return g.Emit(std::move(out), {x}, [x, n](Node& self) {
    if (!x->requires_grad) return;
    x->EnsureGrad();
    for (int64_t i = 0; i < n; ++i) x->grad[i] += self.grad[i];
  });
}

Var Stack(Graph& g, const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("Stack: no inputs");
  const Shape& s0 = xs[0]->value.shape;
  int64_t batch = 0;
  for (Var v : xs) {
    const Shape& s = v->value.shape;
    if (s.d[1] != s0.d[1] || s.d[2] != s0.d[2] || s.d[3] != s0.d[3] ||
        s.d[4] != s0.d[4]) {
      throw std::invalid_argument("Stack: inner shape mismatch");
    }
    batch += s.d[0];
  }
  Tensor out{Shape(batch, s0.d[1], s0.d[2], s0.d[3], s0.d[4])};
  int64_t off = 0;
  for (Var v : xs) {
    std::memcpy(out.data() + off, v->value.data(),
                sizeof(double) * v->value.numel());
    off += v->value.numel();
  }
  return g.Emit(std::move(out), std::vector<Var>(xs),
                [xs](Node& self) {
    int64_t off = 0;
    for (Var v : xs) {
      const int64_t n = v->value.numel();
      if (v->requires_grad) {
        v->EnsureGrad();
        for (int64_t i = 0; i < n; ++i) v->grad[i] += self.grad[off + i];
      }
      off += n;
    }
  });
}

}  // namespace nvf
