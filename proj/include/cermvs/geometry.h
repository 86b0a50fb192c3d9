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

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cermvs/tensor.h"

namespace cermvs {

// Pinhole camera with world-to-camera pose: x ~ K (R X + t). Translation in mm.
struct CameraModel {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  int width = 0;
  int height = 0;

  // Throws if R is not a rotation or K is not a valid intrinsic matrix.
  void Validate() const;

  Eigen::Vector3d Center() const { return -R.transpose() * t; }

  // Projects a world point; returns (u, v, z_cam).
  Eigen::Vector3d Project(const Eigen::Vector3d& world) const;
  // Back-projects image coordinate (u, v) at camera depth z into the world.
  Eigen::Vector3d Unproject(double u, double v, double depth) const;

  // Camera seeing the same scene through an image resized by `scale`, under
  // the pixel-center convention u' = scale * (u + 0.5) - 0.5.
  CameraModel Resized(double scale) const;
};

// Per-pixel inverse depth (1/mm) on a feature grid.
struct DisparityField {
  int width = 0;
  int height = 0;
  std::vector<float> values;

  DisparityField() = default;
  DisparityField(int w, int h, float fill = 0.0f)
      : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

  float& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return values.size(); }
  bool SameGrid(const DisparityField& o) const {
    return width == o.width && height == o.height;
  }

  // Throws unless every value is finite and non-negative.
  void Validate() const;

  friend bool operator==(const DisparityField&, const DisparityField&) = default;
};

struct RelativePose {
  Eigen::Matrix3d R;
  Eigen::Vector3d t;
};

// Pose taking reference-camera coordinates to neighbor-camera coordinates.
RelativePose ComputeRelativePose(const CameraModel& ref, const CameraModel& nbr);

// Inverse depth to depth. Non-positive disparities are unreconstructable.
std::optional<double> DisparityToDepth(double disparity);

// Full-image coordinate of the center of feature cell `a`.
inline double FeatureToImage(double a, int downsize) {
  return a * downsize + 0.5 * (downsize - 1);
}
inline double ImageToFeature(double u, int downsize) {
  return (u - 0.5 * (downsize - 1)) / downsize;
}

// The epipolar line of one reference pixel, parametrized by disparity:
// h(sigma) = K_n (R_rel K_ref^-1 p + sigma t_rel).
class EpipolarRay {
 public:
  EpipolarRay(const CameraModel& ref, const CameraModel& nbr, const Point2& feature_px,
              int downsize);
  EpipolarRay(const Eigen::Matrix3d& rotation_term, const Eigen::Vector3d& translation_term,
              const Point2& feature_px, int downsize);

  Eigen::Vector3d Homogeneous(double disparity) const {
    return direction_ + disparity * offset_;
  }

  // Neighbor feature coordinate, or nullopt when the point lies at or behind
  // the neighbor camera plane.
  std::optional<Point2> FeatureCoord(double disparity) const;

 private:
  Eigen::Vector3d direction_;
  Eigen::Vector3d offset_;
  int downsize_;
};

// Precomputed per-pair terms so that rays for many pixels share the matrix work.
struct EpipolarPair {
  Eigen::Matrix3d rotation_term;     // K_n R_rel K_ref^-1
  Eigen::Vector3d translation_term;  // K_n t_rel

  EpipolarPair(const CameraModel& ref, const CameraModel& nbr);
  EpipolarRay Ray(const Point2& feature_px, int downsize) const {
    return EpipolarRay(rotation_term, translation_term, feature_px, downsize);
  }
};

std::vector<std::optional<Point2>> EpipolarCoords(const CameraModel& ref,
                                                  const CameraModel& nbr,
                                                  const Point2& feature_px,
                                                  std::span<const double> disparities,
                                                  int downsize);

enum class ScaleMode { kGtMedian600, kSparseMin400, kNone };

std::string ScaleModeName(ScaleMode mode);
ScaleMode ParseScaleMode(const std::string& name);

struct SceneScale {
  double factor = 1.0;
  ScaleMode mode = ScaleMode::kNone;
};

// Determines the factor that brings a reference view to the canonical depth
// range: median GT depth 600 mm, or minimum sparse depth 400 mm. Non-positive
// entries of `depths` are ignored (invalid pixels).
SceneScale ComputeSceneScale(ScaleMode mode, std::span<const double> depths);

// Multiplies every camera translation by the scale factor.
std::vector<CameraModel> ApplySceneScale(std::span<const CameraModel> cams,
                                         const SceneScale& scale);

// MVSNet-style camera text file. Image size is not stored in the file.
struct CameraFile {
  CameraModel camera;
  double depth_min = 0.0;
  double depth_interval = 0.0;
};

CameraFile ReadCameraFile(const std::filesystem::path& path);
void WriteCameraFile(const std::filesystem::path& path, const CameraFile& cam);

}  // namespace cermvs
