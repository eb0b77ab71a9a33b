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

#include "nvf/codec.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <iostream>
#include <limits>
#include <ostream>

#include "nvf/metrics.h"
#include "nvf/range_coder.h"

namespace nvf {

namespace {

constexpr char kMagic[4] = {'N', 'V', 'F', 'P'};
constexpr float kMinSigma = 1e-6f;
constexpr double kPi = 3.14159265358979323846;

class ByteWriter {
 public:
  void U8(uint8_t v) { bytes_.push_back(v); }
  void U16(uint16_t v) {
    bytes_.push_back(static_cast<uint8_t>(v));
    bytes_.push_back(static_cast<uint8_t>(v >> 8));
  }
  void U32(uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void F32(float v) { U32(std::bit_cast<uint32_t>(v)); }
  void Bytes(const std::vector<uint8_t>& b) {
    bytes_.insert(bytes_.end(), b.begin(), b.end());
  }
  std::vector<uint8_t> Take() { return std::move(bytes_); }
  size_t size() const { return bytes_.size(); }

 private:
  std::vector<uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<uint8_t>& bytes) : bytes_(bytes) {}

  uint8_t U8() {
    Need(1);
    return bytes_[pos_++];
  }
  uint16_t U16() {
    Need(2);
    uint16_t v = static_cast<uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  uint32_t U32() {
    Need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float F32() { return std::bit_cast<float>(U32()); }
  std::vector<uint8_t> Bytes(size_t n) {
    Need(n);
    std::vector<uint8_t> out(bytes_.begin() + pos_, bytes_.begin() + pos_ + n);
    pos_ += n;
    return out;
  }
  bool AtEnd() const { return pos_ == bytes_.size(); }

 private:
  void Need(size_t n) {
    if (pos_ + n > bytes_.size()) throw DecodeError("bitstream truncated");
  }
  const std::vector<uint8_t>& bytes_;
  size_t pos_ = 0;
};

Tensor OccupancyTensor(const CubeGrid& cube) {
  Tensor t{Shape(1, 1, cube.side, cube.side, cube.side)};
  for (size_t i = 0; i < cube.occupancy.size(); ++i) {
    t.v[i] = cube.occupancy[i] ? 1.0 : 0.0;
  }
  return t;
}

// w[t] = p[t] + delta * index, identical arithmetic on both codec sides.
std::vector<Tensor> WeightsFromIndices(const std::vector<Tensor>& p,
                                       const std::vector<int64_t>& indices) {
  size_t total = 0;
  for (const Tensor& pt : p) total += static_cast<size_t>(pt.numel());
  if (indices.size() != total) {
    throw DecodeError("coded parameter count mismatch");
  }
  std::vector<Tensor> w;
  w.reserve(p.size());
  size_t flat = 0;
  for (const Tensor& pt : p) {
    Tensor wt{pt.shape};
    for (int64_t i = 0; i < pt.numel(); ++i) {
      wt.v[i] = pt.v[i] + kDeltaParam * static_cast<double>(indices[flat++]);
    }
    w.push_back(std::move(wt));
  }
  return w;
}

// Runs the decode-path forward in chunks and returns per-cube P1 tensors.
std::vector<Tensor> CubeProbabilities(const Architecture& arch,
                                      const std::vector<Tensor>& weights,
                                      const std::vector<Tensor>& latents) {
  constexpr size_t kChunk = 8;
  const int ls = arch.latent_side();
  const int cs = arch.cube_side();
  std::vector<Tensor> out;
  out.reserve(latents.size());
  for (size_t begin = 0; begin < latents.size(); begin += kChunk) {
    const size_t end = std::min(begin + kChunk, latents.size());
    Tensor z{Shape(static_cast<int64_t>(end - begin), arch.J, ls, ls, ls)};
    const int64_t per = static_cast<int64_t>(arch.J) * ls * ls * ls;
    for (size_t k = begin; k < end; ++k) {
      std::memcpy(z.data() + (k - begin) * per, latents[k].data(),
                  sizeof(double) * per);
    }
    Tensor p1 = GenerateProbabilities(arch, weights, z);
    const int64_t voxels = static_cast<int64_t>(cs) * cs * cs;
    for (size_t k = begin; k < end; ++k) {
      Tensor t{Shape(1, 1, cs, cs, cs)};
      std::memcpy(t.data(), p1.data() + (k - begin) * voxels,
                  sizeof(double) * voxels);
      out.push_back(std::move(t));
    }
  }
  return out;
}

PointCloud ThresholdedCloud(const std::vector<Tensor>& p1,
                            const std::vector<Vec3i>& origins, int side,
                            int bit_depth, float threshold) {
  PointCloud pc;
  pc.bit_depth = bit_depth;
  const double t = static_cast<double>(threshold);
  for (size_t k = 0; k < p1.size(); ++k) {
    const Tensor& p = p1[k];
    for (int x = 0; x < side; ++x) {
      for (int y = 0; y < side; ++y) {
        for (int z = 0; z < side; ++z) {
          if (p.at(0, 0, x, y, z) >= t) {
            pc.points.push_back(Vec3i{origins[k].x + x, origins[k].y + y,
                                      origins[k].z + z});
          }
        }
      }
    }
  }
  pc.Normalize();
  return pc;
}

}  // namespace

Architecture EncodeConfig::MakeArchitecture() const {
  if (!widths.empty()) {
    Architecture arch;
    arch.N = N;
    arch.L = L;
    arch.J = J;
    arch.widths = widths;
    arch.Validate();
    return arch;
  }
  return Architecture::MakeDefault(N, L, J);
}

EncoderState::EncoderState(std::vector<PointCloud> frames,
                           const EncodeConfig& cfg)
    : cfg_(cfg),
      arch_(cfg.MakeArchitecture()),
      frames_(std::move(frames)),
      nf_(NeuralFieldParams::Create(arch_, cfg.init_separation)),
      mu_z_(Tensor::Scalar(0.0)),
      log_sigma_z_(Tensor::Scalar(0.0)),
      mu_y_(Tensor::Scalar(0.0)),
      // Narrow initial parameter model: the zero-initialized residuals code
      // near-minimally from step 0 and sigma_y widens only if training
      // spreads y.
      log_sigma_y_(Tensor::Scalar(std::log(0.05))),
      noise_rng_(SplitMix64(cfg.seed).Split(1)),
      batch_rng_(SplitMix64(cfg.seed).Split(2)) {
  if (frames_.empty()) throw DataError("encode: no input frames");
  if (cfg_.M < 0 || cfg_.M > 10) throw DataError("encode: M out of range");
  if (cfg_.batch_size < 1) throw DataError("encode: batch size must be >= 1");
  if (cfg_.iterations < 0) throw DataError("encode: negative iteration count");
  if (cfg_.lambda < 0.0) throw DataError("encode: negative lambda");
  if (cfg_.threshold_override > 1.0) {
    throw DataError("encode: threshold override must be in (0, 1]");
  }
  const int depth = cfg_.M + cfg_.N;
  for (const PointCloud& f : frames_) {
    if (f.empty()) throw DataError("encode: empty frame");
    if (f.bit_depth != depth) {
      throw DataError("encode: frame bit depth " + std::to_string(f.bit_depth) +
                      " does not match M + N = " + std::to_string(depth));
    }
  }

  size_t total_points = 0;
  for (size_t fi = 0; fi < frames_.size(); ++fi) {
    auto [tree, grids] = BuildOctree(frames_[fi], cfg_.M, cfg_.N);
    std::vector<Tensor> dists = ComputeDistanceFields(frames_[fi], tree, grids);
    const std::vector<Vec3i> origins = tree.LeafOrigins();
    for (size_t k = 0; k < grids.size(); ++k) {
      CubeRecord rec;
      rec.frame = static_cast<int>(fi);
      rec.origin = origins[k];
      rec.gt1 = OccupancyTensor(grids[k]);
      rec.gt2 = DownsampleOccupancy(rec.gt1);
      rec.gt3 = DownsampleOccupancy(rec.gt2);
      rec.distance = std::move(dists[k]);
      rec.v = Param(Shape(1, arch_.J, arch_.latent_side(), arch_.latent_side(),
                          arch_.latent_side()));
      cubes_.push_back(std::move(rec));
    }
    trees_.push_back(std::move(tree));
    total_points += frames_[fi].size();
  }

  const double cube_voxels = static_cast<double>(cubes_.size()) *
                             arch_.cube_side() * arch_.cube_side() *
                             arch_.cube_side();
  alpha_ = 1.0 - static_cast<double>(total_points) / cube_voxels;

  epoch_order_.resize(cubes_.size());
  for (size_t i = 0; i < epoch_order_.size(); ++i) epoch_order_[i] = i;
  epoch_pos_ = epoch_order_.size();  // trigger shuffle at first NextBatch
}

std::vector<size_t> EncoderState::NextBatch() {
  const size_t b = std::min<size_t>(cfg_.batch_size, cubes_.size());
  std::vector<size_t> batch;
  batch.reserve(b);
  for (size_t i = 0; i < b; ++i) {
    if (epoch_pos_ >= epoch_order_.size()) {
      // Fisher-Yates with the seeded stream.
      for (size_t j = epoch_order_.size(); j > 1; --j) {
        const size_t k = static_cast<size_t>(batch_rng_.NextU64() % j);
        std::swap(epoch_order_[j - 1], epoch_order_[k]);
      }
      epoch_pos_ = 0;
    }
    batch.push_back(epoch_order_[epoch_pos_++]);
  }
  return batch;
}

LossBreakdown EncoderState::TrainingStep(std::span<const size_t> batch,
                                         double lr) {
  Graph g;

  // Noisy coded parameters and effective weights w = p + (y + u).
  Var mu_y = g.Leaf(mu_y_.value, true);
  Var ls_y = g.Leaf(log_sigma_y_.value, true);
  Var mu_z = g.Leaf(mu_z_.value, true);
  Var ls_z = g.Leaf(log_sigma_z_.value, true);

  std::vector<Var> y_leaves, w_vars;
  Var rate_y = nullptr;
  for (size_t t = 0; t < nf_.y.size(); ++t) {
    Var y_leaf = g.Leaf(nf_.y[t].value, true);
    y_leaves.push_back(y_leaf);
    Var y_noisy = AddUniformNoise(g, y_leaf, kDeltaParam, noise_rng_);
    w_vars.push_back(Add(g, g.Constant(nf_.p[t]), y_noisy));
    Var term = GaussianRateNll(g, y_noisy, mu_y, ls_y, kDeltaParam);
    rate_y = rate_y == nullptr ? term : Add(g, rate_y, term);
  }

  // Batch latents through the latent code generator.
  std::vector<Var> v_leaves;
  v_leaves.reserve(batch.size());
  for (size_t k : batch) v_leaves.push_back(g.Leaf(cubes_[k].v.value, true));
  Var v_batch = Stack(g, v_leaves);
  Var lat_w = g.Leaf(nf_.latent_conv_w.value, true);
  Var lat_b = g.Leaf(nf_.latent_conv_b.value, true);
  Var beta_raw = g.Leaf(nf_.gdn_beta_raw.value, true);
  Var gamma_raw = g.Leaf(nf_.gdn_gamma_raw.value, true);
  Var z_noisy = LatentCodeGenerator(g, v_batch, lat_w, lat_b, beta_raw,
                                    gamma_raw, LatentMode::kTrain, &noise_rng_);
  Var rate_z = GaussianRateNll(g, z_noisy, mu_z, ls_z, kDeltaLatent);

  CubeGeneratorOutputs outs = RunCubeGenerator(g, arch_, z_noisy, w_vars);

  // Batched ground truth and distance weights.
  const int64_t b = static_cast<int64_t>(batch.size());
  auto batch_tensor = [&](auto member) {
    const Tensor& first = cubes_[batch[0]].*member;
    Tensor out{Shape(b, 1, first.shape.d[2], first.shape.d[3],
                     first.shape.d[4])};
    const int64_t per = first.numel();
    for (int64_t i = 0; i < b; ++i) {
      std::memcpy(out.data() + i * per, (cubes_[batch[i]].*member).data(),
                  sizeof(double) * per);
    }
    return out;
  };
  Tensor g1 = batch_tensor(&CubeRecord::gt1);
  Tensor g2 = batch_tensor(&CubeRecord::gt2);
  Tensor g3 = batch_tensor(&CubeRecord::gt3);
  Tensor dist =
      cfg_.plain_focal ? Tensor{} : batch_tensor(&CubeRecord::distance);

  LossConfig lc;
  lc.lambda = cfg_.lambda;
  lc.alpha = alpha_;
  lc.gamma_focal = cfg_.gamma_focal;
  lc.raw_distance_weight = cfg_.raw_distance_weight;
  Var distortion =
      MultiscaleDistortion(g, outs.p1, outs.p2, outs.p3, g1, g2, g3, dist, lc);

  Var total = nullptr;
  if (cfg_.rate_loss) total = Add(g, rate_z, rate_y);
  if (cfg_.lambda != 0.0) {
    Var scaled = Scale(g, distortion, cfg_.lambda);
    total = total == nullptr ? scaled : Add(g, total, scaled);
  }
  LossBreakdown lb;
  lb.rate_z = rate_z->value.scalar();
  lb.rate_y = rate_y == nullptr ? 0.0 : rate_y->value.scalar();
  lb.distortion = distortion->value.scalar();
  lb.total = total == nullptr ? 0.0 : total->value.scalar();

  if (total != nullptr) {
    g.Backward(total);
    std::vector<Param*> params;
    std::vector<const double*> grads;
    auto collect = [&](Param* p, Var leaf) {
      if (leaf->grad.empty()) return;  // no gradient flow this step
      params.push_back(p);
      grads.push_back(leaf->grad.data());
    };
    for (size_t t = 0; t < nf_.y.size(); ++t) collect(&nf_.y[t], y_leaves[t]);
    collect(&nf_.latent_conv_w, lat_w);
    collect(&nf_.latent_conv_b, lat_b);
    collect(&nf_.gdn_beta_raw, beta_raw);
    collect(&nf_.gdn_gamma_raw, gamma_raw);
    collect(&mu_z_, mu_z);
    collect(&log_sigma_z_, ls_z);
    collect(&mu_y_, mu_y);
    collect(&log_sigma_y_, ls_y);
    for (size_t i = 0; i < batch.size(); ++i) {
      collect(&cubes_[batch[i]].v, v_leaves[i]);
    }
    AdamStep(std::span<Param*>(params),
             std::span<const double* const>(grads.data(), grads.size()), lr);
  }
  ++step_;
  last_loss_ = lb;
  return lb;
}

GaussianModelParams EncoderState::CurrentQ() const {
  GaussianModelParams q;
  q.mu_z = static_cast<float>(mu_z_.value.scalar());
  q.sigma_z = std::max(
      static_cast<float>(std::exp(log_sigma_z_.value.scalar())), kMinSigma);
  q.mu_y = static_cast<float>(mu_y_.value.scalar());
  q.sigma_y = std::max(
      static_cast<float>(std::exp(log_sigma_y_.value.scalar())), kMinSigma);
  return q;
}

std::vector<Tensor> EncoderState::QuantizedEffectiveWeights(
    const GaussianModelParams& q, std::vector<int64_t>* y_indices,
    size_t* clipped) const {
  int64_t lo, hi;
  DefaultIndexRange(q.mu_y, q.sigma_y, kDeltaParam, &lo, &hi);
  y_indices->clear();
  for (const Param& t : nf_.y) {
    for (double v : t.value.v) {
      int64_t idx = QuantizeIndex(v, kDeltaParam);
      if (idx < lo || idx > hi) {
        idx = std::clamp(idx, lo, hi);
        ++*clipped;
      }
      y_indices->push_back(idx);
    }
  }
  return WeightsFromIndices(nf_.p, *y_indices);
}

std::vector<Tensor> EncoderState::ExportLatents(const GaussianModelParams& q,
                                                std::vector<int64_t>* z_indices,
                                                size_t* clipped) const {
  int64_t lo, hi;
  DefaultIndexRange(q.mu_z, q.sigma_z, kDeltaLatent, &lo, &hi);
  z_indices->clear();

  // Noise-free latent generator forward over all cubes at once.
  Graph g;
  std::vector<Var> vs;
  vs.reserve(cubes_.size());
  for (const CubeRecord& c : cubes_) vs.push_back(g.Constant(c.v.value));
  Var v_all = Stack(g, vs);
  Var z_cont = LatentCodeGenerator(
      g, v_all, g.Constant(nf_.latent_conv_w.value),
      g.Constant(nf_.latent_conv_b.value), g.Constant(nf_.gdn_beta_raw.value),
      g.Constant(nf_.gdn_gamma_raw.value), LatentMode::kExport, nullptr);

  const int ls = arch_.latent_side();
  const int64_t per = static_cast<int64_t>(arch_.J) * ls * ls * ls;
  std::vector<Tensor> latents;
  latents.reserve(cubes_.size());
  for (size_t k = 0; k < cubes_.size(); ++k) {
    Tensor zk{Shape(1, arch_.J, ls, ls, ls)};
    for (int64_t i = 0; i < per; ++i) {
      // Export values are already integers; clip into the coder alphabet.
      int64_t idx = static_cast<int64_t>(z_cont->value.v[k * per + i]);
      if (idx < lo || idx > hi) {
        idx = std::clamp(idx, lo, hi);
        ++*clipped;
      }
      z_indices->push_back(idx);
      zk.v[i] = static_cast<double>(idx);
    }
    latents.push_back(std::move(zk));
  }
  return latents;
}

RateProbe EncoderState::ProbeTrueRate() {
  const GaussianModelParams q = CurrentQ();
  size_t clipped = 0;
  std::vector<int64_t> y_idx, z_idx;
  QuantizedEffectiveWeights(q, &y_idx, &clipped);
  ExportLatents(q, &z_idx, &clipped);

  int64_t lo, hi;
  RateProbe probe;
  DefaultIndexRange(q.mu_y, q.sigma_y, kDeltaParam, &lo, &hi);
  FrozenCdf cdf_y =
      FrozenCdf::Freeze(DiscretePmfTable(q.mu_y, q.sigma_y, kDeltaParam, lo, hi), lo);
  probe.y_bits = cdf_y.EstimateBits(y_idx) + 32.0;
  DefaultIndexRange(q.mu_z, q.sigma_z, kDeltaLatent, &lo, &hi);
  FrozenCdf cdf_z =
      FrozenCdf::Freeze(DiscretePmfTable(q.mu_z, q.sigma_z, kDeltaLatent, lo, hi), lo);
  probe.z_bits =
      cdf_z.EstimateBits(z_idx) + 32.0 * static_cast<double>(frames_.size());
  return probe;
}

EncodeResult EncoderState::Finalize() {
  const GaussianModelParams q = CurrentQ();
  size_t clipped = 0;
  std::vector<int64_t> y_idx, z_idx;
  const std::vector<Tensor> weights = QuantizedEffectiveWeights(q, &y_idx, &clipped);
  const std::vector<Tensor> latents = ExportLatents(q, &z_idx, &clipped);
  if (clipped > 0) {
    std::cerr << "warning: " << clipped
              << " symbols clipped into the coder alphabet\n";
  }

  // Decode-path probabilities for every cube, grouped per frame.
  std::vector<Tensor> p1_all = CubeProbabilities(arch_, weights, latents);
  std::vector<std::vector<Tensor>> p1_by_frame(frames_.size());
  std::vector<std::vector<Vec3i>> origins_by_frame(frames_.size());
  for (size_t k = 0; k < cubes_.size(); ++k) {
    p1_by_frame[cubes_[k].frame].push_back(p1_all[k]);
    origins_by_frame[cubes_[k].frame].push_back(cubes_[k].origin);
  }

  float threshold;
  if (cfg_.threshold_override > 0.0) {
    threshold = static_cast<float>(cfg_.threshold_override);
  } else {
    threshold = SelectThreshold(p1_by_frame, origins_by_frame, frames_);
  }

  EncodeResult result;
  const int depth = cfg_.M + cfg_.N;
  for (size_t fi = 0; fi < frames_.size(); ++fi) {
    result.reconstructions.push_back(
        ThresholdedCloud(p1_by_frame[fi], origins_by_frame[fi],
                         arch_.cube_side(), depth, threshold));
  }

  // Entropy-coded segments.
  int64_t ylo, yhi, zlo, zhi;
  DefaultIndexRange(q.mu_y, q.sigma_y, kDeltaParam, &ylo, &yhi);
  DefaultIndexRange(q.mu_z, q.sigma_z, kDeltaLatent, &zlo, &zhi);
  const FrozenCdf cdf_y = FrozenCdf::Freeze(
      DiscretePmfTable(q.mu_y, q.sigma_y, kDeltaParam, ylo, yhi), ylo);
  const FrozenCdf cdf_z = FrozenCdf::Freeze(
      DiscretePmfTable(q.mu_z, q.sigma_z, kDeltaLatent, zlo, zhi), zlo);
  const std::vector<uint8_t> y_segment = EncodeSymbols(y_idx, cdf_y);

  const int ls = arch_.latent_side();
  const size_t z_per_cube = static_cast<size_t>(arch_.J) * ls * ls * ls;
  std::vector<std::vector<uint8_t>> z_segments;
  {
    size_t cube_base = 0;
    for (size_t fi = 0; fi < frames_.size(); ++fi) {
      const size_t n_cubes = p1_by_frame[fi].size();
      std::vector<int64_t> frame_symbols(
          z_idx.begin() + cube_base * z_per_cube,
          z_idx.begin() + (cube_base + n_cubes) * z_per_cube);
      z_segments.push_back(EncodeSymbols(frame_symbols, cdf_z));
      cube_base += n_cubes;
    }
  }

  // Assemble the stream.
  ByteWriter bw;
  for (char c : kMagic) bw.U8(static_cast<uint8_t>(c));
  bw.U8(cfg_.init_separation ? kVersionInitSeparation : kVersionAbsoluteParams);
  bw.U8(static_cast<uint8_t>(cfg_.M));
  bw.U8(static_cast<uint8_t>(cfg_.N));
  bw.U8(static_cast<uint8_t>(arch_.L));
  bw.U8(static_cast<uint8_t>(arch_.J));
  bw.U8(static_cast<uint8_t>(arch_.widths.size()));
  for (int w : arch_.widths) bw.U16(static_cast<uint16_t>(w));
  bw.U16(static_cast<uint16_t>(frames_.size()));
  size_t octree_bits_stored = 0;
  for (size_t fi = 0; fi < frames_.size(); ++fi) {
    const std::vector<uint8_t> tree_bytes = trees_[fi].SerializeBfs();
    bw.U32(static_cast<uint32_t>(p1_by_frame[fi].size()));
    bw.U32(static_cast<uint32_t>(trees_[fi].SerializedBitCount()));
    bw.Bytes(tree_bytes);
    octree_bits_stored += tree_bytes.size() * 8;
  }
  bw.F32(q.mu_z);
  bw.F32(q.sigma_z);
  bw.F32(q.mu_y);
  bw.F32(q.sigma_y);
  bw.F32(threshold);
  bw.U32(static_cast<uint32_t>(y_segment.size()));
  bw.Bytes(y_segment);
  size_t z_bytes = 0;
  for (const auto& seg : z_segments) {
    bw.U32(static_cast<uint32_t>(seg.size()));
    bw.Bytes(seg);
    z_bytes += seg.size();
  }
  result.bitstream = bw.Take();

  // Accounting. Header bits are whatever is not octree/y/z payload.
  EncodeStats& s = result.stats;
  s.octree_bits = octree_bits_stored;
  s.y_bits = y_segment.size() * 8;
  s.z_bits = z_bytes * 8;
  s.total_bits = result.bitstream.size() * 8;
  s.header_bits = s.total_bits - s.octree_bits - s.y_bits - s.z_bits;
  for (const PointCloud& f : frames_) s.total_points += f.size();
  s.bpp = static_cast<double>(s.total_bits) / static_cast<double>(s.total_points);
  s.threshold = threshold;
  s.q = q;
  s.cube_count = cubes_.size();
  s.coded_parameter_count = nf_.CodedParameterCount();
  s.clipped_symbols = clipped;
  s.final_loss = last_loss_;
  for (int64_t idx : y_idx) {
    s.estimated_y_bits -= std::log2(BinProbability(
        Dequantize(idx, kDeltaParam), q.mu_y, q.sigma_y, kDeltaParam));
  }
  for (int64_t idx : z_idx) {
    s.estimated_z_bits -= std::log2(BinProbability(
        Dequantize(idx, kDeltaLatent), q.mu_z, q.sigma_z, kDeltaLatent));
  }
  return result;
}

EncodeResult EncoderState::Run(std::ostream* log) {
  for (int step = 0; step < cfg_.iterations; ++step) {
    const double lr =
        cfg_.learning_rate * 0.5 *
        (1.0 + std::cos(kPi * static_cast<double>(step) /
                        static_cast<double>(std::max(1, cfg_.iterations))));
    if (log != nullptr && cfg_.probe_interval > 0 &&
        step % cfg_.probe_interval == 0) {
      const RateProbe probe = ProbeTrueRate();
      *log << "probe step=" << step << " y_bits=" << probe.y_bits
           << " z_bits=" << probe.z_bits << "\n";
    }
    const std::vector<size_t> batch = NextBatch();
    const LossBreakdown lb = TrainingStep(batch, lr);
    if (log != nullptr &&
        (step % cfg_.log_interval == 0 || step + 1 == cfg_.iterations)) {
      *log << "step=" << step << " lr=" << lr << " loss=" << lb.total
           << " rate_z=" << lb.rate_z << " rate_y=" << lb.rate_y
           << " distortion=" << lb.distortion << "\n";
    }
  }
  return Finalize();
}

EncodeResult Encode(const std::vector<PointCloud>& frames,
                    const EncodeConfig& cfg, std::ostream* log) {
  EncoderState state(frames, cfg);
  return state.Run(log);
}

namespace {

BitstreamInfo ParseHeader(ByteReader& br,
                          std::vector<std::vector<uint8_t>>* octree_bytes,
                          std::vector<uint32_t>* octree_bits) {
  BitstreamInfo info;
  for (char c : kMagic) {
    if (br.U8() != static_cast<uint8_t>(c)) {
      throw DecodeError("bad magic; not an NVFP stream");
    }
  }
  info.version = br.U8();
  if (info.version != kVersionInitSeparation &&
      info.version != kVersionAbsoluteParams) {
    throw DecodeError("unsupported version " + std::to_string(info.version));
  }
  info.M = br.U8();
  info.N = br.U8();
  info.L = br.U8();
  info.J = br.U8();
  const int width_count = br.U8();
  for (int i = 0; i < width_count; ++i) info.widths.push_back(br.U16());
  info.frame_count = br.U16();
  if (info.frame_count < 1) throw DecodeError("no frames in stream");
  for (int fi = 0; fi < info.frame_count; ++fi) {
    info.cube_counts.push_back(br.U32());
    const uint32_t bits = br.U32();
    if (bits % 8 != 0) throw DecodeError("octree bit length not byte-aligned");
    if (octree_bits != nullptr) octree_bits->push_back(bits);
    std::vector<uint8_t> bytes = br.Bytes(bits / 8);
    if (octree_bytes != nullptr) octree_bytes->push_back(std::move(bytes));
  }
  info.q.mu_z = br.F32();
  info.q.sigma_z = br.F32();
  info.q.mu_y = br.F32();
  info.q.sigma_y = br.F32();
  info.threshold = br.F32();
  if (!std::isfinite(info.q.mu_z) || !std::isfinite(info.q.mu_y) ||
      !(info.q.sigma_z > 0.0f) || !(info.q.sigma_y > 0.0f)) {
    throw DecodeError("invalid distribution parameters");
  }
  if (!(info.threshold >= 0.0f) || !(info.threshold <= 1.0f)) {
    throw DecodeError("invalid threshold");
  }
  return info;
}

}  // namespace

BitstreamInfo InspectBitstream(const std::vector<uint8_t>& bitstream) {
  ByteReader br(bitstream);
  BitstreamInfo info = ParseHeader(br, nullptr, nullptr);
  info.total_bits = bitstream.size() * 8;
  return info;
}

std::vector<PointCloud> Decode(const std::vector<uint8_t>& bitstream) {
  ByteReader br(bitstream);
  std::vector<std::vector<uint8_t>> octree_bytes;
  std::vector<uint32_t> octree_bits;
  BitstreamInfo info = ParseHeader(br, &octree_bytes, &octree_bits);

  Architecture arch;
  arch.N = info.N;
  arch.L = info.L;
  arch.J = info.J;
  arch.widths = info.widths;
  try {
    arch.Validate();
  } catch (const DataError& e) {
    throw DecodeError(std::string("invalid architecture in header: ") + e.what());
  }

  // Coded parameter layout is fixed by the architecture.
  std::vector<Tensor> p = info.version == kVersionInitSeparation
                              ? KaimingInit(arch, kParamInitSeed)
                              : std::vector<Tensor>();
  if (info.version == kVersionAbsoluteParams) {
    for (const Tensor& t : KaimingInit(arch, kParamInitSeed)) {
      p.emplace_back(t.shape);  // zeros of the right shapes
    }
  }
  size_t y_count = 0;
  for (const Tensor& t : p) y_count += static_cast<size_t>(t.numel());

  const uint32_t y_len = br.U32();
  const std::vector<uint8_t> y_segment = br.Bytes(y_len);
  std::vector<std::vector<uint8_t>> z_segments;
  for (int fi = 0; fi < info.frame_count; ++fi) {
    const uint32_t z_len = br.U32();
    z_segments.push_back(br.Bytes(z_len));
  }
  if (!br.AtEnd()) throw DecodeError("trailing bytes after stream");

  int64_t ylo, yhi, zlo, zhi;
  DefaultIndexRange(info.q.mu_y, info.q.sigma_y, kDeltaParam, &ylo, &yhi);
  DefaultIndexRange(info.q.mu_z, info.q.sigma_z, kDeltaLatent, &zlo, &zhi);
  const FrozenCdf cdf_y = FrozenCdf::Freeze(
      DiscretePmfTable(info.q.mu_y, info.q.sigma_y, kDeltaParam, ylo, yhi), ylo);
  const FrozenCdf cdf_z = FrozenCdf::Freeze(
      DiscretePmfTable(info.q.mu_z, info.q.sigma_z, kDeltaLatent, zlo, zhi), zlo);

  const std::vector<int64_t> y_idx = DecodeSymbols(y_segment, y_count, cdf_y);
  const std::vector<Tensor> weights = WeightsFromIndices(p, y_idx);

  const int ls = arch.latent_side();
  const size_t z_per_cube = static_cast<size_t>(arch.J) * ls * ls * ls;
  const int depth = info.M + info.N;

  std::vector<PointCloud> frames;
  for (int fi = 0; fi < info.frame_count; ++fi) {
    ShallowOctree tree = ShallowOctree::DeserializeBfs(
        octree_bytes[fi], octree_bits[fi], info.M, info.N);
    if (tree.leaf_count() != info.cube_counts[fi]) {
      throw DecodeError("cube count does not match octree leaves");
    }
    const std::vector<Vec3i> origins = tree.LeafOrigins();
    const std::vector<int64_t> z_idx = DecodeSymbols(
        z_segments[fi], info.cube_counts[fi] * z_per_cube, cdf_z);
    std::vector<Tensor> latents;
    latents.reserve(origins.size());
    for (size_t k = 0; k < origins.size(); ++k) {
      Tensor zk{Shape(1, arch.J, ls, ls, ls)};
      for (size_t i = 0; i < z_per_cube; ++i) {
        zk.v[i] = static_cast<double>(z_idx[k * z_per_cube + i]);
      }
      latents.push_back(std::move(zk));
    }
    const std::vector<Tensor> p1 = CubeProbabilities(arch, weights, latents);
    frames.push_back(ThresholdedCloud(p1, origins, arch.cube_side(), depth,
                                      info.threshold));
  }
  return frames;
}

float SelectThreshold(
    const std::vector<std::vector<Tensor>>& p1_by_frame,
    const std::vector<std::vector<Vec3i>>& origins_by_frame,
    const std::vector<PointCloud>& references) {
  const size_t F = references.size();
  if (F == 0 || p1_by_frame.size() != F || origins_by_frame.size() != F) {
    throw DataError("SelectThreshold: frame list mismatch");
  }

  struct Entry {
    double p;
    int frame;
    Vec3i voxel;
    int64_t d2_to_ref;
  };
  std::vector<Entry> entries;
  std::vector<VoxelKdTree> ref_trees;
  size_t total_ref_points = 0;
  for (size_t fi = 0; fi < F; ++fi) {
    if (references[fi].empty()) throw DataError("SelectThreshold: empty reference");
    ref_trees.emplace_back(references[fi].points);
    total_ref_points += references[fi].size();
  }

  for (size_t fi = 0; fi < F; ++fi) {
    const auto& p1 = p1_by_frame[fi];
    const auto& origins = origins_by_frame[fi];
    if (p1.size() != origins.size()) {
      throw DataError("SelectThreshold: cube list mismatch");
    }
    for (size_t k = 0; k < p1.size(); ++k) {
      const Tensor& t = p1[k];
      const int side = static_cast<int>(t.shape.d[2]);
      for (int x = 0; x < side; ++x) {
        for (int y = 0; y < side; ++y) {
          for (int z = 0; z < side; ++z) {
            const double p = t.at(0, 0, x, y, z);
            if (p < 0.0099) continue;  // below every candidate threshold
            Entry e;
            e.p = p;
            e.frame = static_cast<int>(fi);
            e.voxel = Vec3i{origins[k].x + x, origins[k].y + y, origins[k].z + z};
            e.d2_to_ref = ref_trees[fi].NearestSquaredDistance(e.voxel);
            entries.push_back(e);
          }
        }
      }
    }
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.p != b.p) return a.p > b.p;
    if (a.frame != b.frame) return a.frame < b.frame;
    return a.voxel < b.voxel;
  });

  struct Candidate {
    double t = 0.0;
    double gap = std::numeric_limits<double>::infinity();
    double worst_mse = std::numeric_limits<double>::infinity();
    bool valid = false;
  };
  Candidate best;

  size_t prefix = 0;
  int64_t sum_d2_ab = 0;
  // Descend the grid so the included-voxel prefix only grows.
  for (int ti = 99; ti >= 1; --ti) {
    const double t = static_cast<double>(ti) / 100.0;
    while (prefix < entries.size() && entries[prefix].p >= t) {
      sum_d2_ab += entries[prefix].d2_to_ref;
      ++prefix;
    }
    if (prefix == 0) continue;

    // Pooled recon->ref MSE.
    const double mse_ab =
        static_cast<double>(sum_d2_ab) / static_cast<double>(prefix);

    // Pooled ref->recon MSE; every frame needs a non-empty reconstruction.
    bool all_frames_nonempty = true;
    int64_t sum_d2_ba = 0;
    for (size_t fi = 0; fi < F && all_frames_nonempty; ++fi) {
      std::vector<Vec3i> recon;
      for (size_t i = 0; i < prefix; ++i) {
        if (entries[i].frame == static_cast<int>(fi)) {
          recon.push_back(entries[i].voxel);
        }
      }
      if (recon.empty()) {
        all_frames_nonempty = false;
        break;
      }
      const VoxelKdTree tree(recon);
      for (const Vec3i& p : references[fi].points) {
        sum_d2_ba += tree.NearestSquaredDistance(p);
      }
    }
    if (!all_frames_nonempty) continue;
    const double mse_ba =
        static_cast<double>(sum_d2_ba) / static_cast<double>(total_ref_points);

    double gap;
    if (mse_ab == 0.0 && mse_ba == 0.0) {
      gap = 0.0;
    } else if (mse_ab == 0.0 || mse_ba == 0.0) {
      gap = std::numeric_limits<double>::infinity();
    } else {
      gap = std::abs(std::log(mse_ab) - std::log(mse_ba));
    }
    const double worst = std::max(mse_ab, mse_ba);

    const bool better =
        !best.valid || gap < best.gap - 1e-12 ||
        (std::abs(gap - best.gap) <= 1e-12 &&
         (worst < best.worst_mse - 1e-12 ||
          (std::abs(worst - best.worst_mse) <= 1e-12 && t < best.t)));
    if (better) {
      best.valid = true;
      best.t = t;
      best.gap = gap;
      best.worst_mse = worst;
    }
  }
  if (!best.valid) {
    throw DataError(
        "SelectThreshold: reconstruction is empty at every threshold");
  }
  return static_cast<float>(best.t);
}

}  // namespace nvf
