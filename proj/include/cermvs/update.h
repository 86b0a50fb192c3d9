// Copyright 2026 The cermvs Authors. All Rights Reserved.
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

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cermvs/cost_volume.h"
#include "cermvs/geometry.h"
#include "cermvs/io.h"
#include "cermvs/tensor.h"

namespace cermvs {

// Network hyperparameters. Defaults are the full-size configuration; the
// bundled checkpoint declares smaller widths in its manifest.
struct ModelConfig {
  int iters_stage1 = 8;  // T1
  int iters_stage2 = 8;  // T2
  int hidden_dim = 128;  // Dh
  int feature_dim = 64;  // Df
  int num_levels = 3;    // L
  int radius = 11;       // R
  int coarse_samples = 64;
  int downsize = 4;
  double max_disparity = 0.0025;
  double fine_increment = 0.0025 / 320.0;
  std::array<int, 3> encoder_widths = {64, 96, 128};
  int corr_enc1 = 96;  // Encoder_c widths
  int corr_enc2 = 64;
  int disp_enc = 64;   // Encoder_d width

  double coarse_increment() const { return max_disparity / coarse_samples; }
  int input_dim() const { return disp_enc + corr_enc2 + hidden_dim; }
  Stage1Params stage1() const;
  Stage2Params stage2() const;
  void Validate() const;
};

// Seeded random scales for the fixed (non-fitted) layers.
struct InitScales {
  double encoder = 1.0;    // He-normal gain for the image encoders
  double context = 1.0;    // extra gain on the context projection
  double residual = 1.0;   // gain on each residual block's second conv; 0 makes blocks skips
  double corr = 1.0;       // Encoder_c
  double disparity = 1.0;  // Encoder_d, applied to disparity in fine-bin units
  double gru = 1.0;
};

// Named weight tensors plus the hyperparameters they were built for. GRU
// weights are shared by every iteration; Decoder_1 and Decoder_2 are the only
// stage-specific tensors.
class WeightSet {
 public:
  ModelConfig config;

  const Tensor& Get(const std::string& name) const;
  Tensor& Mutable(const std::string& name);
  void Set(const std::string& name, Tensor value);
  bool Has(const std::string& name) const { return tensors_.count(name) != 0; }
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }

  // FNV-1a over the raw bytes of one tensor.
  std::uint64_t Checksum(const std::string& name) const;
  // Throws unless every tensor is finite.
  void Validate() const;

 private:
  std::map<std::string, Tensor> tensors_;
};

// Seeded initialization. Decoders start at zero.
WeightSet InitWeights(const ModelConfig& config, std::uint64_t seed,
                      const InitScales& scales = {});
WeightSet ZeroWeights(const ModelConfig& config);

// Manifest: key=value hyperparameters and one "layer=<name> <file>" line per
// tensor; tensor files live next to the manifest.
void SaveCheckpoint(const std::filesystem::path& manifest, const WeightSet& weights);
WeightSet LoadCheckpoint(const std::filesystem::path& manifest);

// Image in [-1, 1] as a [3,H,W] tensor.
Tensor ImageToTensor(const RgbImage& image);

// Feature encoder (instance norm) -> [Df, H/4, W/4].
Tensor EncodeFeatures(const Tensor& image, const WeightSet& weights);

struct ContextOutput {
  Tensor context;  // i, ReLU of the first half
  Tensor hidden;   // h0, tanh of the second half
};
// Context encoder (batch norm with stored statistics) -> two [Dh, H/4, W/4].
ContextOutput EncodeContext(const Tensor& image, const WeightSet& weights);

// 7x7 neighborhood differences d(y+dy, x+dx) - d(y, x), edge replicated,
// channel (dy+3)*7 + (dx+3).
Tensor EncodeDisparity(const DisparityField& d);

struct UpdateState {
  Tensor h;        // [Dh, Hf, Wf]
  Tensor context;  // [Dh, Hf, Wf]
  DisparityField d;
  int t = 0;  // index of the last completed iteration
};

// One GRU iteration on the fused lookup [R*L, Hf, Wf]. Returns the state with
// the new hidden state and t + 1; d is unchanged.
UpdateState GruStep(const UpdateState& state, const Tensor& corr, const WeightSet& weights);

// x_t = [Encoder_d(d), Encoder_c(corr), context], exposed for tests.
Tensor GruInput(const UpdateState& state, const Tensor& corr, const WeightSet& weights);

// Disparity increment from h_t: Decoder_1 while t <= T1, else Decoder_2. The
// decoder output is in units of its stage's disparity increment.
DisparityField DecodeDelta(const UpdateState& state, const WeightSet& weights);

// d + delta, clamped at 0.
DisparityField ApplyDelta(const DisparityField& d, const DisparityField& delta);

struct InferenceTrace {
  std::vector<DisparityField> preds;    // after each iteration
  std::vector<Tensor> hidden;           // h_t for each iteration
  std::vector<std::vector<std::uint8_t>> clamped;  // per iteration, 1 where d hit 0
  DisparityField stage2_centers;
};

struct ViewFeatures {
  Tensor features;
  ContextOutput context;  // filled for reference views only
};

// Runs the cascade on precomputed features. cams[0] is the reference.
DisparityField RunInferenceOnFeatures(const Tensor& ref_feat, const ContextOutput& ctx,
                                      std::span<const Tensor> nbr_feats,
                                      std::span<const CameraModel> cams,
                                      const WeightSet& weights,
                                      InferenceTrace* trace = nullptr);

// Full pipeline from images: encoders, stage 1 for T1 iterations, stage 2
// centered on the stage-1 result for T2 iterations.
DisparityField RunInference(const RgbImage& ref, std::span<const RgbImage> nbrs,
                            std::span<const CameraModel> cams, const WeightSet& weights,
                            InferenceTrace* trace = nullptr);

// Gradient of sum(upstream * conv3x3(h)) with respect to a [1, Dh, 3, 3]
// decoder kernel and its bias, before the stage increment scaling.
struct DecoderGradient {
  Tensor weight;
  double bias = 0.0;
};
DecoderGradient DecoderWeightGradient(const Tensor& h, const DisparityField& upstream);

}  // namespace cermvs
