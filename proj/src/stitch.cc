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

#include "cermvs/stitch.h"

#include <algorithm>
#include <cmath>

#include "cermvs/error.h"

namespace cermvs {

namespace {

constexpr double kBisectionPrecision = 1e-3;
constexpr double kInf = std::numeric_limits<double>::infinity();
// Round-trip coordinates on the border may land a rounding error outside it.
constexpr double kEdgeSlack = 1e-9;

// Bilinear depth lookup; nullopt outside the image or next to invalid pixels.
std::optional<double> SampleDepth(const FloatMap& depth, double u, double v) {
  if (!(u >= -kEdgeSlack && v >= -kEdgeSlack && u <= depth.width - 1 + kEdgeSlack &&
        v <= depth.height - 1 + kEdgeSlack)) {
    return std::nullopt;
  }
  u = std::clamp(u, 0.0, depth.width - 1.0);
  v = std::clamp(v, 0.0, depth.height - 1.0);
  const int x0 = static_cast<int>(std::floor(u));
  const int y0 = static_cast<int>(std::floor(v));
  const int x1 = std::min(x0 + 1, depth.width - 1);
  const int y1 = std::min(y0 + 1, depth.height - 1);
  const double ax = u - x0, ay = v - y0;
  const float taps[4] = {depth.at(y0, x0), depth.at(y0, x1), depth.at(y1, x0), depth.at(y1, x1)};
  const double weights[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
  double acc = 0.0;
  for (int i = 0; i < 4; ++i) {
    if (weights[i] == 0.0) continue;
    if (!(taps[i] > 0.0f)) return std::nullopt;
    acc += weights[i] * taps[i];
  }
  return acc;
}

FloatMap Unscaled(const StitchView& v) {
  CERMVS_CHECK(v.scale > 0.0, "stitch view scale must be positive");
  FloatMap d = v.depth;
  if (v.scale != 1.0) {
    for (auto& z : d.values) z = static_cast<float>(z / v.scale);
  }
  return d;
}

}  // namespace

void ConsistencyConfig::Validate() const {
  CERMVS_CHECK(t1 > 0.0 && t2 > 0.0, "consistency thresholds must be positive");
  CERMVS_CHECK(p > 0.0 && p < 100.0, "pass percentage must be in (0, 100)");
  CERMVS_CHECK(n_min >= 1, "n_min must be at least 1");
}

ReprojectionError ReprojectionErrors(const CameraModel& ref_cam, const FloatMap& ref_depth,
                                     const CameraModel& nbr_cam, const FloatMap& nbr_depth,
                                     int x, int y) {
  ReprojectionError err;
  const double z = ref_depth.at(y, x);
  if (!(z > 0.0)) return err;
  const Eigen::Vector3d world = ref_cam.Unproject(x, y, z);
  const Eigen::Vector3d in_nbr = nbr_cam.Project(world);
  if (!(in_nbr.z() > 0.0)) return err;
  const auto nbr_z = SampleDepth(nbr_depth, in_nbr.x(), in_nbr.y());
  if (!nbr_z) return err;
  const Eigen::Vector3d back = ref_cam.Project(nbr_cam.Unproject(in_nbr.x(), in_nbr.y(), *nbr_z));
  if (!(back.z() > 0.0)) return err;
  err.e_p = std::hypot(back.x() - x, back.y() - y);
  err.e_d = std::abs(back.z() - z) / z;
  err.depth = back.z();
  return err;
}

double PixelKappa(std::span<const ReprojectionError> errors, const ConsistencyConfig& cfg) {
  if (static_cast<int>(errors.size()) < cfg.n_min) return kInf;
  std::vector<double> need;
  need.reserve(errors.size());
  for (const auto& e : errors) need.push_back(std::max(e.e_p / cfg.t1, e.e_d / cfg.t2));
  std::nth_element(need.begin(), need.begin() + (cfg.n_min - 1), need.end());
  return need[cfg.n_min - 1];
}

KSolution SolveAdaptiveK(std::vector<double> kappas, const ConsistencyConfig& cfg) {
  cfg.Validate();
  KSolution sol;
  if (kappas.empty()) return sol;
  std::sort(kappas.begin(), kappas.end());
  const double target = cfg.p / 100.0;
  auto fraction = [&](double k) {
    const auto passing = std::lower_bound(kappas.begin(), kappas.end(), k) - kappas.begin();
    return static_cast<double>(passing) / static_cast<double>(kappas.size());
  };
  if (fraction(kMaxK) < target) {
    sol.k = kMaxK;
    sol.pass_fraction = fraction(kMaxK);
    return sol;
  }
  sol.reached = true;
  if (fraction(kMinK) >= target) {
    sol.k = kMinK;
    sol.pass_fraction = fraction(kMinK);
    return sol;
  }
  double lo = kMinK, hi = kMaxK;  // fraction(lo) < target <= fraction(hi)
  while (hi > lo * (1.0 + kBisectionPrecision)) {
    const double mid = std::sqrt(lo * hi);
    if (fraction(mid) >= target) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  sol.k = hi;
  sol.pass_fraction = fraction(hi);
  return sol;
}

PointCloud Stitch(std::span<const StitchView> views, const ConsistencyConfig& cfg,
                  StitchReport* report) {
  cfg.Validate();
  StitchReport local;
  StitchReport& rep = report ? *report : local;
  rep = StitchReport{};

  std::vector<FloatMap> depths;
  depths.reserve(views.size());
  for (const auto& v : views) {
    CERMVS_CHECK(v.depth.width == v.cam.width && v.depth.height == v.cam.height,
                 "stitch depth map extents must match the camera");
    for (const int n : v.neighbors) {
      CERMVS_CHECK(n >= 0 && n < static_cast<int>(views.size()), "neighbor index out of range");
    }
    depths.push_back(Unscaled(v));
  }

  // Errors are computed once; the k search then only reads the kappas.
  struct PixelRecord {
    int view, x, y;
    double kappa;
    std::vector<ReprojectionError> errors;
  };
  std::vector<PixelRecord> pixels;
  std::vector<double> kappas;
  for (std::size_t vi = 0; vi < views.size(); ++vi) {
    const auto& v = views[vi];
    for (int y = 0; y < v.cam.height; ++y) {
      for (int x = 0; x < v.cam.width; ++x) {
        if (!(depths[vi].at(y, x) > 0.0f)) continue;
        PixelRecord rec{static_cast<int>(vi), x, y, kInf, {}};
        for (const int n : v.neighbors) {
          rec.errors.push_back(ReprojectionErrors(v.cam, depths[vi], views[n].cam, depths[n], x, y));
        }
        rec.kappa = PixelKappa(rec.errors, cfg);
        kappas.push_back(rec.kappa);
        pixels.push_back(std::move(rec));
      }
    }
  }
  rep.valid_pixels = pixels.size();
  rep.k = SolveAdaptiveK(kappas, cfg);
  if (!rep.k.reached) {
    rep.warnings.push_back("pass target of " + std::to_string(cfg.p) +
                           "% not reachable even at k = 1e6");
  }

  PointCloud cloud;
  const double k = rep.k.k;
  for (const auto& rec : pixels) {
    if (!(rec.kappa < k)) continue;
    const auto& v = views[rec.view];
    double sum = depths[rec.view].at(rec.y, rec.x);
    int count = 1;
    for (const auto& e : rec.errors) {
      if (e.e_p < k * cfg.t1 && e.e_d < k * cfg.t2) {
        sum += e.depth;
        ++count;
      }
    }
    const Eigen::Vector3d p = v.cam.Unproject(rec.x, rec.y, sum / count);
    const std::uint8_t* rgb = v.image.width == v.cam.width && v.image.height == v.cam.height
                                  ? v.image.pixel(rec.y, rec.x)
                                  : nullptr;
    cloud.push_back({static_cast<float>(p.x()), static_cast<float>(p.y()),
                     static_cast<float>(p.z()), rgb ? rgb[0] : std::uint8_t{0},
                     rgb ? rgb[1] : std::uint8_t{0}, rgb ? rgb[2] : std::uint8_t{0}});
  }
  rep.passing_pixels = cloud.size();
  if (cloud.empty()) rep.warnings.push_back("no pixel passed the consistency test");
  return cloud;
}

}  // namespace cermvs
