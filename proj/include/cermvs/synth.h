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

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cermvs/geometry.h"
#include "cermvs/io.h"
#include "cermvs/loss.h"
#include "cermvs/tensor.h"
#include "cermvs/update.h"

namespace cermvs {

struct Surface {
  enum class Kind { kPlane, kSphere };
  Kind kind = Kind::kPlane;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();  // plane point or sphere center
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  double radius = 0.0;

  // Smallest positive ray parameter of origin + lambda * dir on this surface.
  std::optional<double> Intersect(const Eigen::Vector3d& origin,
                                  const Eigen::Vector3d& dir) const;
};

// Scene description: surfaces seen by a ring of cameras converging on look_at.
// View 0 sits on the ring axis when center_view is set.
struct SceneSpec {
  std::vector<Surface> surfaces;
  int num_views = 5;
  bool center_view = true;
  double ring_tilt_deg = 15.0;
  double ring_phase_deg = 0.0;
  double ring_distance = 600.0;
  Eigen::Vector3d look_at = Eigen::Vector3d(0, 0, 600);
  double focal = 600.0;
  int width = 320;
  int height = 240;
  std::uint64_t seed = 1;
  double texture_cell = 24.0;  // mm, coarsest noise octave

  static SceneSpec FromKeyValues(const KeyValues& kv);
  std::string ToText() const;
};

struct SyntheticScene {
  SceneSpec spec;
  std::vector<CameraModel> cams;
  std::vector<FloatMap> gt_depth;  // mm along the optical axis, 0 where no surface
  std::vector<RgbImage> images;
};

std::vector<CameraModel> MakeRingCameras(const SceneSpec& spec);

// Depth along the optical axis of the nearest surface through image
// coordinate (u, v), or nullopt if the ray misses everything.
std::optional<double> TraceDepth(std::span<const Surface> surfaces, const CameraModel& cam,
                                 double u, double v);

// Four-octave value noise in [0, 1], a solid texture evaluated on surfaces.
double TextureValue(const Eigen::Vector3d& world, std::uint64_t seed, double cell);

SyntheticScene GenerateScene(const SceneSpec& spec);

// Random orthonormal matrix from the QR factorization of a seeded Gaussian.
Eigen::MatrixXd RandomOrthonormal(int n, std::uint64_t seed);

struct FeatureRendering {
  Tensor features;  // [Df, Hf, Wf]
  FloatMap depth;   // GT depth at the feature cell centers, 0 if invalid
};

// Features for geometric tests that bypass the learned encoder: one noise
// channel per feature dimension at each cell's surface point, normalized to
// unit length and mixed by a fixed random orthonormal matrix. Matching cells
// across views get identical vectors.
FeatureRendering RenderFeatures(const SyntheticScene& scene, int view, int downsize,
                                int channels, std::uint64_t seed);

// Loop-based reference correlation of one reference cell against a neighbor
// feature map: back-projects through world space, bilinearly samples, and
// normalizes by sqrt(Df). Test oracle for the cost-volume builder.
std::vector<double> BruteForceCost(const CameraModel& ref_cam, const CameraModel& nbr_cam,
                                   const Tensor& ref_feat, const Tensor& nbr_feat,
                                   int feature_x, int feature_y,
                                   std::span<const double> disparities, int downsize);

// Whether world point X is the first surface hit seen from `cam` and lands in
// its image.
bool IsVisible(std::span<const Surface> surfaces, const CameraModel& cam,
               const Eigen::Vector3d& world);

// Surface points unprojected from GT depth (every `stride`-th pixel) that at
// least `min_views` views observe.
PointCloud GroundTruthCloud(const SyntheticScene& scene, int stride, int min_views);

// Writes images/, cams/, gt_depth/, neighbors.txt, sparse_depths.txt, gt.ply
// and scene.cfg.
void WriteSceneDirectory(const std::filesystem::path& dir, const SyntheticScene& scene);

// One reference view with encoded features and GT disparity at feature
// resolution, ready for decoder fitting.
struct TrainingSample {
  Tensor ref_feat;
  ContextOutput context;
  std::vector<Tensor> nbr_feats;
  std::vector<CameraModel> cams;  // reference first
  DisparityField gt;              // 0 where no surface
};

// Encodes a crop of `view` and its neighbors. With `upsample` > 1 the images
// are first upsampled as the 2x pipeline does. The crop origin and extents are
// in (upsampled) image pixels and must be multiples of 4. `scale` multiplies
// the translations, as the scene scaling would.
TrainingSample MakeTrainingSample(const SyntheticScene& scene, int view,
                                  std::span<const int> neighbors, const WeightSet& weights,
                                  int crop_x, int crop_y, int crop_w, int crop_h,
                                  double scale = 1.0, int upsample = 1);

struct FitOptions {
  int steps = 100;
  double learning_rate = 1.0;
  // Scale each decoder step by the inverse second-moment matrix of its 3x3
  // hidden-state patches (plus ridge * mean diagonal).
  bool precondition = true;
  double ridge = 1e-3;
  LossConfig loss;  // w is overwritten by the schedule each step
};

struct FitReport {
  std::vector<double> losses;  // total loss at each step, before the update
  double initial_loss = 0.0;
};

// Gradient descent on the two decoder layers only, every other tensor stays
// as given. The gradient treats hidden states as constants and accumulates
// through the additive disparity updates. Throws a numerical-failure error
// if the loss exceeds ten times its initial value.
WeightSet FitTinyCheckpoint(std::span<const TrainingSample> samples, WeightSet init,
                            const FitOptions& options, FitReport* report = nullptr);

// Mean absolute disparity error over valid GT pixels.
double MeanAbsDisparityError(const DisparityField& pred, const DisparityField& gt);

}  // namespace cermvs
