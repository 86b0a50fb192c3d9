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

#include "cermvs/evalkit.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "cermvs/error.h"

namespace cermvs {

namespace {

double Distance(const ColoredPoint& p, double x, double y, double z) {
  const double dx = static_cast<double>(p.x) - x;
  const double dy = static_cast<double>(p.y) - y;
  const double dz = static_cast<double>(p.z) - z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

struct OneWay {
  double mean = 0.0;
  double within = 0.0;  // percent below tau
};

OneWay Directed(const PointCloud& from, const PointCloud& to, double tau, double max_dist) {
  const GridIndex index(to, tau);
  double sum = 0.0;
  std::size_t close = 0;
  for (const auto& p : from) {
    const double d = index.Nearest(p.x, p.y, p.z, max_dist);
    sum += d;
    if (d < tau) ++close;
  }
  return {sum / static_cast<double>(from.size()),
          100.0 * static_cast<double>(close) / static_cast<double>(from.size())};
}

}  // namespace

std::string CloudMetrics::ToText() const {
  std::ostringstream os;
  os << std::setprecision(10) << "accuracy " << accuracy << "\ncompleteness " << completeness
     << "\noverall " << overall << "\nprecision " << precision << "\nrecall " << recall
     << "\nf1 " << f1 << "\n";
  return os.str();
}

GridIndex::GridIndex(const PointCloud& cloud, double cell) : cloud_(cloud), cell_(cell) {
  CERMVS_CHECK(cell > 0.0 && std::isfinite(cell), "grid cell size must be positive");
  for (std::uint32_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud[i];
    CERMVS_CHECK(std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.z),
                 "point cloud has non-finite coordinates");
    cells_[Key(static_cast<std::int64_t>(std::floor(p.x / cell_)),
               static_cast<std::int64_t>(std::floor(p.y / cell_)),
               static_cast<std::int64_t>(std::floor(p.z / cell_)))]
        .push_back(i);
  }
}

std::int64_t GridIndex::Key(std::int64_t ix, std::int64_t iy, std::int64_t iz) const {
  // 21 bits per axis; wrap-around only merges far-apart cells, which the exact
  // distance check then rejects.
  constexpr std::int64_t kMask = (1 << 21) - 1;
  return ((ix & kMask) << 42) | ((iy & kMask) << 21) | (iz & kMask);
}

double GridIndex::Nearest(double x, double y, double z, double cap) const {
  const auto cx = static_cast<std::int64_t>(std::floor(x / cell_));
  const auto cy = static_cast<std::int64_t>(std::floor(y / cell_));
  const auto cz = static_cast<std::int64_t>(std::floor(z / cell_));
  double best = cap;
  const auto max_ring = static_cast<std::int64_t>(std::ceil(cap / cell_)) + 1;
  for (std::int64_t r = 0; r <= max_ring; ++r) {
    // Every point in ring r is at least (r - 1) * cell away.
    if (r >= 1 && static_cast<double>(r - 1) * cell_ >= best) break;
    for (std::int64_t dx = -r; dx <= r; ++dx) {
      for (std::int64_t dy = -r; dy <= r; ++dy) {
        for (std::int64_t dz = -r; dz <= r; ++dz) {
          if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) continue;
          const auto it = cells_.find(Key(cx + dx, cy + dy, cz + dz));
          if (it == cells_.end()) continue;
          for (const std::uint32_t i : it->second) best = std::min(best, Distance(cloud_[i], x, y, z));
        }
      }
    }
  }
  return best;
}

double BruteForceNearest(const PointCloud& cloud, double x, double y, double z, double cap) {
  double best = cap;
  for (const auto& p : cloud) best = std::min(best, Distance(p, x, y, z));
  return best;
}

CloudMetrics ComputeMetrics(const PointCloud& recon, const PointCloud& gt, double tau,
                            double max_dist) {
  CERMVS_CHECK(!recon.empty(), "reconstruction point cloud is empty");
  CERMVS_CHECK(!gt.empty(), "ground-truth point cloud is empty");
  CERMVS_CHECK(tau > 0.0 && max_dist > 0.0, "tau and max_dist must be positive");
  for (const PointCloud* cloud : {&recon, &gt}) {
    for (const auto& p : *cloud) {
      CERMVS_CHECK(std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.z),
                   "point cloud has non-finite coordinates");
    }
  }
  const OneWay acc = Directed(recon, gt, tau, max_dist);
  const OneWay comp = Directed(gt, recon, tau, max_dist);
  CloudMetrics m;
  m.accuracy = acc.mean;
  m.completeness = comp.mean;
  m.overall = 0.5 * (m.accuracy + m.completeness);
  m.precision = acc.within;
  m.recall = comp.within;
  m.f1 = m.precision + m.recall > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

}  // namespace cermvs
