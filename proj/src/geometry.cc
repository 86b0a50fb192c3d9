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

#include "cermvs/geometry.h"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cermvs/error.h"

namespace cermvs {

namespace {

constexpr double kRotationTolerance = 1e-6;
constexpr double kMinHomogeneousDepth = 1e-9;

}  // namespace

void CameraModel::Validate() const {
  const Eigen::Matrix3d should_be_identity = R * R.transpose();
  if (!should_be_identity.isApprox(Eigen::Matrix3d::Identity(), kRotationTolerance) ||
      std::abs(R.determinant() - 1.0) > kRotationTolerance) {
    ThrowInvalid("camera rotation is not orthonormal with determinant 1");
  }
  if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0) {
    ThrowInvalid("camera intrinsics must be upper-triangular");
  }
  if (!(K(0, 0) > 0.0) || !(K(1, 1) > 0.0)) {
    ThrowInvalid("camera focal lengths must be positive");
  }
  if (!t.allFinite()) ThrowInvalid("camera translation is not finite");
}

Eigen::Vector3d CameraModel::Project(const Eigen::Vector3d& world) const {
  const Eigen::Vector3d cam = R * world + t;
  const Eigen::Vector3d h = K * cam;
  return {h.x() / h.z(), h.y() / h.z(), cam.z()};
}

Eigen::Vector3d CameraModel::Unproject(double u, double v, double depth) const {
  const Eigen::Vector3d ray = K.inverse() * Eigen::Vector3d(u, v, 1.0);
  const Eigen::Vector3d cam = ray * (depth / ray.z());
  return R.transpose() * (cam - t);
}

CameraModel CameraModel::Resized(double scale) const {
  CameraModel out = *this;
  out.K.row(0) *= scale;
  out.K.row(1) *= scale;
  out.K(0, 2) += 0.5 * scale - 0.5;
  out.K(1, 2) += 0.5 * scale - 0.5;
  out.width = static_cast<int>(std::lround(width * scale));
  out.height = static_cast<int>(std::lround(height * scale));
  return out;
}

void DisparityField::Validate() const {
  CERMVS_CHECK(width >= 1 && height >= 1 &&
                   values.size() == static_cast<std::size_t>(width) * height,
               "disparity field extents do not match its data");
  for (const float v : values) {
    CERMVS_CHECK(std::isfinite(v) && v >= 0.0f, "disparity values must be finite and >= 0");
  }
}

RelativePose ComputeRelativePose(const CameraModel& ref, const CameraModel& nbr) {
  RelativePose rel;
  rel.R = nbr.R * ref.R.transpose();
  rel.t = nbr.t - rel.R * ref.t;
  return rel;
}

std::optional<double> DisparityToDepth(double disparity) {
  if (!(disparity > 0.0)) return std::nullopt;
  return 1.0 / disparity;
}

EpipolarPair::EpipolarPair(const CameraModel& ref, const CameraModel& nbr) {
  const RelativePose rel = ComputeRelativePose(ref, nbr);
  rotation_term = nbr.K * rel.R * ref.K.inverse();
  translation_term = nbr.K * rel.t;
}

EpipolarRay::EpipolarRay(const CameraModel& ref, const CameraModel& nbr,
                         const Point2& feature_px, int downsize)
    : EpipolarRay(EpipolarPair(ref, nbr).Ray(feature_px, downsize)) {}

EpipolarRay::EpipolarRay(const Eigen::Matrix3d& rotation_term,
                         const Eigen::Vector3d& translation_term,
                         const Point2& feature_px, int downsize)
    : offset_(translation_term), downsize_(downsize) {
  const Eigen::Vector3d p(FeatureToImage(feature_px.x, downsize),
                          FeatureToImage(feature_px.y, downsize), 1.0);
  direction_ = rotation_term * p;
}

std::optional<Point2> EpipolarRay::FeatureCoord(double disparity) const {
  const Eigen::Vector3d h = Homogeneous(disparity);
  if (!(h.z() > kMinHomogeneousDepth)) return std::nullopt;
  return Point2{ImageToFeature(h.x() / h.z(), downsize_),
                ImageToFeature(h.y() / h.z(), downsize_)};
}

std::vector<std::optional<Point2>> EpipolarCoords(const CameraModel& ref,
                                                  const CameraModel& nbr,
                                                  const Point2& feature_px,
                                                  std::span<const double> disparities,
                                                  int downsize) {
  CERMVS_CHECK(downsize >= 1, "downsize must be positive");
  for (const double d : disparities) {
    CERMVS_CHECK(d >= 0.0, "epipolar disparities must be non-negative");
  }
  const EpipolarRay ray(ref, nbr, feature_px, downsize);
  std::vector<std::optional<Point2>> out;
  out.reserve(disparities.size());
  for (const double d : disparities) out.push_back(ray.FeatureCoord(d));
  return out;
}

std::string ScaleModeName(ScaleMode mode) {
  switch (mode) {
    case ScaleMode::kGtMedian600:
      return "gt-median-600";
    case ScaleMode::kSparseMin400:
      return "sparse-min-400";
    case ScaleMode::kNone:
      return "none";
  }
  return "none";
}

ScaleMode ParseScaleMode(const std::string& name) {
  if (name == "gt-median-600") return ScaleMode::kGtMedian600;
  if (name == "sparse-min-400") return ScaleMode::kSparseMin400;
  if (name == "none") return ScaleMode::kNone;
  ThrowInvalid("unknown scale mode '" + name + "'");
}

SceneScale ComputeSceneScale(ScaleMode mode, std::span<const double> depths) {
  SceneScale scale;
  scale.mode = mode;
  if (mode == ScaleMode::kNone) return scale;

  std::vector<double> valid;
  valid.reserve(depths.size());
  for (const double d : depths) {
    if (d > 0.0 && std::isfinite(d)) valid.push_back(d);
  }
  CERMVS_CHECK(!valid.empty(), "scene scaling needs at least one positive reference depth");

  if (mode == ScaleMode::kGtMedian600) {
    const auto mid = valid.begin() + static_cast<std::ptrdiff_t>(valid.size() / 2);
    std::nth_element(valid.begin(), mid, valid.end());
    double median = *mid;
    if (valid.size() % 2 == 0) {
      median = 0.5 * (median + *std::max_element(valid.begin(), mid));
    }
    scale.factor = 600.0 / median;
  } else {
    scale.factor = 400.0 / *std::min_element(valid.begin(), valid.end());
  }
  return scale;
}

std::vector<CameraModel> ApplySceneScale(std::span<const CameraModel> cams,
                                         const SceneScale& scale) {
  CERMVS_CHECK(scale.factor > 0.0, "scene scale factor must be positive");
  std::vector<CameraModel> out(cams.begin(), cams.end());
  for (auto& cam : out) cam.t *= scale.factor;
  return out;
}

namespace {

void ExpectToken(std::istream& in, const std::string& token,
                 const std::filesystem::path& path) {
  std::string word;
  if (!(in >> word) || word != token) {
    ThrowIo("camera file " + path.string() + ": expected '" + token + "'");
  }
}

}  // namespace

CameraFile ReadCameraFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) ThrowIo("cannot open camera file: " + path.string());
  CameraFile out;
  ExpectToken(in, "extrinsic", path);
  Eigen::Matrix4d extrinsic;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      if (!(in >> extrinsic(r, c))) ThrowIo("camera file " + path.string() + ": bad extrinsic");
    }
  }
  ExpectToken(in, "intrinsic", path);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      if (!(in >> out.camera.K(r, c))) {
        ThrowIo("camera file " + path.string() + ": bad intrinsic");
      }
    }
  }
  out.camera.R = extrinsic.topLeftCorner<3, 3>();
  out.camera.t = extrinsic.topRightCorner<3, 1>();
  if (!(in >> out.depth_min >> out.depth_interval)) {
    out.depth_min = 0.0;
    out.depth_interval = 0.0;
  }
  try {
    out.camera.Validate();
  } catch (const Error& e) {
    ThrowInvalid("camera file " + path.string() + ": " + e.what());
  }
  return out;
}

void WriteCameraFile(const std::filesystem::path& path, const CameraFile& cam) {
  std::ofstream out(path);
  if (!out) ThrowIo("cannot write camera file: " + path.string());
  out << std::setprecision(17);
  out << "extrinsic\n";
  for (int r = 0; r < 3; ++r) {
    out << cam.camera.R(r, 0) << " " << cam.camera.R(r, 1) << " " << cam.camera.R(r, 2)
        << " " << cam.camera.t(r) << "\n";
  }
  out << "0 0 0 1\n\nintrinsic\n";
  for (int r = 0; r < 3; ++r) {
    out << cam.camera.K(r, 0) << " " << cam.camera.K(r, 1) << " " << cam.camera.K(r, 2)
        << "\n";
  }
  out << "\n" << cam.depth_min << " " << cam.depth_interval << "\n";
  if (!out) ThrowIo("failed writing camera file: " + path.string());
}

}  // namespace cermvs
