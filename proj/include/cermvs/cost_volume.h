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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "cermvs/geometry.h"
#include "cermvs/tensor.h"

namespace cermvs {

// Pyramid of per-neighbor epipolar correlation volumes. Level l has shape
// [N, Hf, Wf, D / 2^l], disparity innermost.
struct CostVolumeStack {
  std::vector<Tensor> levels;
  // Disparity step (1/mm) between adjacent level-0 samples.
  double base_increment = 0.0;
  // Per-pixel window centers; present only for the cascade's fine stage.
  std::optional<DisparityField> centers;

  int num_neighbors() const { return levels.empty() ? 0 : static_cast<int>(levels[0].dim(0)); }
  int height() const { return static_cast<int>(levels.at(0).dim(1)); }
  int width() const { return static_cast<int>(levels.at(0).dim(2)); }
  int num_samples() const { return static_cast<int>(levels.at(0).dim(3)); }
  int num_levels() const { return static_cast<int>(levels.size()); }
};

struct Stage1Params {
  int num_samples = 64;  // D
  double max_disparity = 0.0025;
  int num_levels = 3;  // L
  int downsize = 4;
};

struct Stage2Params {
  int radius = 11;  // R, the lookup window length
  int num_levels = 3;
  double fine_increment = 0.0025 / 320.0;
  int downsize = 4;

  int num_samples() const { return (1 << (num_levels - 1)) * radius; }
};

// Disparity of stage-1 sample j: j * d_max / D, so 0 is included and d_max is not.
double Stage1Disparity(const Stage1Params& params, int j);

// cams[0] is the reference camera, cams[1..N] pair with nbr_feats.
CostVolumeStack BuildStage1Volume(const Tensor& ref_feat, std::span<const Tensor> nbr_feats,
                                  std::span<const CameraModel> cams,
                                  const Stage1Params& params);

// Fine volume sampled at centers(y,x) + (j - D^f/2) * fine_increment.
CostVolumeStack BuildStage2Volume(const Tensor& ref_feat, std::span<const Tensor> nbr_feats,
                                  std::span<const CameraModel> cams,
                                  const DisparityField& centers, const Stage2Params& params);

// Builds the pooled pyramid from a level-0 volume.
std::vector<Tensor> PoolVolume(Tensor level0, int num_levels);

// Correlation windows of length `radius` around d at every level, per
// neighbor: [N, radius * L, Hf, Wf], levels concatenated in order.
Tensor LookupVolume(const CostVolumeStack& stack, const DisparityField& disparity,
                    int radius);

// Mean over the neighbor axis: [N, C, H, W] -> [C, H, W].
Tensor FuseViews(const Tensor& per_neighbor);

struct MemoryEstimate {
  std::uint64_t cascaded_elements = 0;
  std::uint64_t non_cascaded_elements = 0;

  double ratio() const {
    return static_cast<double>(cascaded_elements) /
           static_cast<double>(non_cascaded_elements);
  }
};

// Element count of one pooled stack with `samples` level-0 disparities.
std::uint64_t StackElements(int samples, int num_levels, int height, int width,
                            int num_neighbors);

// Cascaded (coarse + fine stacks) versus a single stack whose increment equals
// the fine one across the full disparity range.
MemoryEstimate EstimateMemory(int coarse_samples, int fine_samples, int full_range_samples,
                              int num_levels, int height, int width, int num_neighbors);

// One TNSR file per level per neighbor, named level<l>_nbr<n>.tnsr.
void DumpCostVolume(const std::filesystem::path& dir, const CostVolumeStack& stack);
CostVolumeStack LoadCostVolume(const std::filesystem::path& dir, int num_levels,
                               int num_neighbors, double base_increment);

}  // namespace cermvs
