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

#ifndef NVF_CODEC_H_
#define NVF_CODEC_H_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nvf/distortion.h"
#include "nvf/neural_field.h"
#include "nvf/octree.h"
#include "nvf/pointcloud.h"
#include "nvf/rate_model.h"

namespace nvf {

// Bitstream version written after the magic. Version 2 marks streams whose
// coded parameters are absolute weights (no fixed pseudo-random offset),
// produced by the --no-init-sep ablation.
inline constexpr uint8_t kVersionInitSeparation = 1;
inline constexpr uint8_t kVersionAbsoluteParams = 2;

struct EncodeConfig {
  int M = 5;
  int N = 5;
  int L = 1;
  int J = 4;
  std::vector<int> widths;  // empty: default for (N, L)

  double lambda = 1000.0;
  int iterations = 30000;
  double learning_rate = 1e-3;  // cosine-decayed to zero
  int batch_size = 8;
  uint64_t seed = 1;
  int log_interval = 200;
  int probe_interval = 1000;  // true-rate probe cadence; 0 disables

  // Ablation switches.
  bool rate_loss = true;
  bool init_separation = true;
  bool plain_focal = false;  // drop the distance weighting at full scale
  bool raw_distance_weight = false;
  double gamma_focal = 2.0;

  double threshold_override = -1.0;  // <= 0: balanced-PSNR search

  Architecture MakeArchitecture() const;
};

struct LossBreakdown {
  double rate_z = 0.0;     // nats
  double rate_y = 0.0;     // nats
  double distortion = 0.0;
  double total = 0.0;      // the backpropagated scalar
};

struct RateProbe {
  double y_bits = 0.0;  // codeable length of quantized y at current q
  double z_bits = 0.0;
};

struct EncodeStats {
  size_t header_bits = 0;
  size_t octree_bits = 0;
  size_t y_bits = 0;
  size_t z_bits = 0;
  size_t total_bits = 0;
  size_t total_points = 0;
  double bpp = 0.0;
  float threshold = 0.0f;
  GaussianModelParams q;
  size_t cube_count = 0;
  int64_t coded_parameter_count = 0;
  size_t clipped_symbols = 0;
  // Sum of -log2 q(value) over coded symbols, from the unfrozen Gaussian
  // bins; the coded segment lengths should stay within ~1% of this.
  double estimated_y_bits = 0.0;
  double estimated_z_bits = 0.0;
  LossBreakdown final_loss;
};

struct EncodeResult {
  std::vector<uint8_t> bitstream;
  // Encoder-side reconstructions (quantized parameters, threshold applied);
  // decode() must reproduce these voxel-for-voxel.
  std::vector<PointCloud> reconstructions;
  EncodeStats stats;
};

// Training state for one encode. Exposed so tests can drive single steps and
// rate probes directly.
class EncoderState {
 public:
  EncoderState(std::vector<PointCloud> frames, const EncodeConfig& cfg);

  size_t cube_count() const { return cubes_.size(); }
  size_t frame_count() const { return frames_.size(); }
  double empty_fraction() const { return alpha_; }

  // One optimizer step over y, the latent-generator parameters, q, and the
  // latents of the batch cubes. Rate terms are measured on noise-perturbed
  // surrogates.
  LossBreakdown TrainingStep(std::span<const size_t> batch, double lr);

  // Deterministic batch for a step (seeded shuffle, epoch order).
  std::vector<size_t> NextBatch();

  // Codeable length of the quantized parameters/latents under the current q.
  RateProbe ProbeTrueRate();

  // Quantizes, selects the threshold, entropy-codes, and assembles the
  // bitstream.
  EncodeResult Finalize();

  // Runs the full schedule: iterations steps with cosine-decayed lr, probes
  // and logging to `log` when non-null, then Finalize().
  EncodeResult Run(std::ostream* log);

 private:
  struct CubeRecord {
    int frame = 0;
    Vec3i origin;
    Tensor gt1, gt2, gt3;  // occupancy at full/half/quarter resolution
    Tensor distance;
    Param v;
  };

  GaussianModelParams CurrentQ() const;
  std::vector<Tensor> QuantizedEffectiveWeights(
      const GaussianModelParams& q, std::vector<int64_t>* y_indices,
      size_t* clipped) const;
  std::vector<Tensor> ExportLatents(const GaussianModelParams& q,
                                    std::vector<int64_t>* z_indices,
                                    size_t* clipped) const;

  EncodeConfig cfg_;
  Architecture arch_;
  std::vector<PointCloud> frames_;
  std::vector<ShallowOctree> trees_;
  std::vector<CubeRecord> cubes_;
  double alpha_ = 0.5;  // portion of empty voxels over all cube voxels

  NeuralFieldParams nf_;
  Param mu_z_, log_sigma_z_, mu_y_, log_sigma_y_;

  SplitMix64 noise_rng_;
  SplitMix64 batch_rng_;
  std::vector<size_t> epoch_order_;
  size_t epoch_pos_ = 0;
  int step_ = 0;
  LossBreakdown last_loss_;
};

// Full encode: the rate-distortion training loop plus bitstream assembly.
// All frames must share the configured bit depth M + N.
EncodeResult Encode(const std::vector<PointCloud>& frames,
                    const EncodeConfig& cfg, std::ostream* log = nullptr);

// Rebuilds the point clouds from bitstream bytes alone (plus the fixed init
// seed and the architecture rules).
std::vector<PointCloud> Decode(const std::vector<uint8_t>& bitstream);

// Parsed header info, for eval/reporting.
struct BitstreamInfo {
  uint8_t version = 0;
  int M = 0, N = 0, L = 0, J = 0;
  std::vector<int> widths;
  int frame_count = 0;
  std::vector<uint32_t> cube_counts;
  GaussianModelParams q;
  float threshold = 0.0f;
  size_t total_bits = 0;
};
BitstreamInfo InspectBitstream(const std::vector<uint8_t>& bitstream);

// Balanced-PSNR threshold over the 0.01..0.99 grid (step 0.01): minimizes
// the gap between the two directional PSNRs; ties prefer the higher worst-
// direction PSNR, then the smaller threshold. Probability tensors are
// (1, 1, side, side, side), grouped per frame with their cube origins.
float SelectThreshold(
    const std::vector<std::vector<Tensor>>& p1_by_frame,
    const std::vector<std::vector<Vec3i>>& origins_by_frame,
    const std::vector<PointCloud>& references);

}  // namespace nvf

#endif  // NVF_CODEC_H_
