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
#include <string>
#include <unordered_map>
#include <vector>

#include "cermvs/io.h"

namespace cermvs {

struct CloudMetrics {
  double accuracy = 0.0;      // mm
  double completeness = 0.0;  // mm
  double overall = 0.0;       // mm
  double precision = 0.0;     // percent
  double recall = 0.0;        // percent
  double f1 = 0.0;            // percent

  std::string ToText() const;
};

// Uniform hash grid over a point cloud for exact capped nearest-neighbor
// queries.
class GridIndex {
 public:
  GridIndex(const PointCloud& cloud, double cell);

  // Distance to the nearest indexed point, or `cap` if none is closer.
  double Nearest(double x, double y, double z, double cap) const;

 private:
  std::int64_t Key(std::int64_t ix, std::int64_t iy, std::int64_t iz) const;

  const PointCloud& cloud_;
  double cell_;
  std::unordered_map<std::int64_t, std::vector<std::uint32_t>> cells_;
};

// Plain loop over every point; the reference for GridIndex.
double BruteForceNearest(const PointCloud& cloud, double x, double y, double z, double cap);

inline constexpr double kDefaultMaxDist = 20.0;

CloudMetrics ComputeMetrics(const PointCloud& recon, const PointCloud& gt, double tau,
                            double max_dist = kDefaultMaxDist);

}  // namespace cermvs
