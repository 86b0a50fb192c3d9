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

#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cermvs/geometry.h"
#include "cermvs/io.h"

namespace cermvs {

struct ConsistencyConfig {
  double t1 = 1.0;   // px
  double t2 = 0.01;  // relative depth
  int n_min = 2;
  double p = 25.0;   // percent of valid pixels that must pass

  void Validate() const;
};

// One reference view ready for stitching. Depth is in the scaled frame and is
// divided by `scale` before any geometry, so cameras are the unscaled ones.
struct StitchView {
  CameraModel cam;
  FloatMap depth;  // mm, 0 where invalid; same extents as the camera image
  RgbImage image;
  std::vector<int> neighbors;  // indices into the view list
  double scale = 1.0;
};

struct ReprojectionError {
  double e_p = std::numeric_limits<double>::infinity();
  double e_d = std::numeric_limits<double>::infinity();
  double depth = 0.0;  // round-trip depth in the reference camera
};

// Round trip ref pixel -> nbr (bilinear depth lookup) -> ref. Invalid lookups
// give infinite errors.
ReprojectionError ReprojectionErrors(const CameraModel& ref_cam, const FloatMap& ref_depth,
                                     const CameraModel& nbr_cam, const FloatMap& nbr_depth,
                                     int x, int y);

inline constexpr double kMinK = 1e-9;
inline constexpr double kMaxK = 1e6;

struct KSolution {
  double k = kMaxK;
  double pass_fraction = 0.0;
  bool reached = false;  // false when even kMaxK misses p%
};

// Per-pixel threshold scale needed to pass: the n_min-th smallest over
// neighbors of max(e_p / t1, e_d / t2), infinity when fewer neighbors exist.
double PixelKappa(std::span<const ReprojectionError> errors, const ConsistencyConfig& cfg);

// Smallest k (geometric bisection to relative precision 1e-3) whose pass
// fraction, the share of `kappas` strictly below k, reaches p%.
KSolution SolveAdaptiveK(std::vector<double> kappas, const ConsistencyConfig& cfg);

struct StitchReport {
  KSolution k;
  std::size_t valid_pixels = 0;
  std::size_t passing_pixels = 0;
  std::vector<std::string> warnings;
};

// Solves k over every valid pixel of every view, then emits one point per
// passing pixel at the mean of its own and its consistent neighbors' depths.
PointCloud Stitch(std::span<const StitchView> views, const ConsistencyConfig& cfg,
                  StitchReport* report = nullptr);

}  // namespace cermvs
