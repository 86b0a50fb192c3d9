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

#include "cermvs/synth.h"

#include <Eigen/Cholesky>
#include <Eigen/Geometry>
#include <Eigen/LU>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "cermvs/error.h"

namespace cermvs {

namespace {

constexpr double kMinRayParam = 1e-9;

std::uint64_t SplitMix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double LatticeValue(std::int64_t x, std::int64_t y, std::int64_t z, std::uint64_t seed) {
  std::uint64_t h = SplitMix(seed);
  h = SplitMix(h ^ static_cast<std::uint64_t>(x));
  h = SplitMix(h ^ static_cast<std::uint64_t>(y));
  h = SplitMix(h ^ static_cast<std::uint64_t>(z));
  return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

double Fade(double t) { return t * t * (3.0 - 2.0 * t); }

double ValueNoise(const Eigen::Vector3d& p, std::uint64_t seed) {
  const double fx = std::floor(p.x()), fy = std::floor(p.y()), fz = std::floor(p.z());
  const auto ix = static_cast<std::int64_t>(fx);
  const auto iy = static_cast<std::int64_t>(fy);
  const auto iz = static_cast<std::int64_t>(fz);
  const double tx = Fade(p.x() - fx), ty = Fade(p.y() - fy), tz = Fade(p.z() - fz);
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx) {
        const double w = (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz);
        acc += w * LatticeValue(ix + dx, iy + dy, iz + dz, seed);
      }
    }
  }
  return acc;
}

Eigen::Vector3d ParseVector(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  Eigen::Vector3d v;
  if (!(in >> v.x() >> v.y() >> v.z())) ThrowInvalid("scene spec '" + key + "' needs 3 numbers");
  return v;
}

double ParseDouble(const std::string& text, const std::string& key) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    ThrowInvalid("scene spec '" + key + "' is not a number: " + text);
  }
}

}  // namespace

std::optional<double> Surface::Intersect(const Eigen::Vector3d& origin,
                                         const Eigen::Vector3d& dir) const {
  if (kind == Kind::kPlane) {
    const double denom = normal.dot(dir);
    if (std::abs(denom) < 1e-15) return std::nullopt;
    const double lambda = normal.dot(point - origin) / denom;
    if (lambda > kMinRayParam) return lambda;
    return std::nullopt;
  }
  const Eigen::Vector3d oc = origin - point;
  const double a = dir.squaredNorm();
  const double b = 2.0 * dir.dot(oc);
  const double c = oc.squaredNorm() - radius * radius;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  const double near = (-b - sq) / (2.0 * a);
  if (near > kMinRayParam) return near;
  const double far = (-b + sq) / (2.0 * a);
  if (far > kMinRayParam) return far;
  return std::nullopt;
}

SceneSpec SceneSpec::FromKeyValues(const KeyValues& kv) {
  SceneSpec spec;
  for (const auto& [key, value] : kv) {
    if (key == "views") {
      spec.num_views = static_cast<int>(ParseDouble(value, key));
    } else if (key == "center_view") {
      spec.center_view = ParseDouble(value, key) != 0.0;
    } else if (key == "ring_tilt_deg") {
      spec.ring_tilt_deg = ParseDouble(value, key);
    } else if (key == "ring_phase_deg") {
      spec.ring_phase_deg = ParseDouble(value, key);
    } else if (key == "ring_distance") {
      spec.ring_distance = ParseDouble(value, key);
    } else if (key == "look_at") {
      spec.look_at = ParseVector(value, key);
    } else if (key == "focal") {
      spec.focal = ParseDouble(value, key);
    } else if (key == "width") {
      spec.width = static_cast<int>(ParseDouble(value, key));
    } else if (key == "height") {
      spec.height = static_cast<int>(ParseDouble(value, key));
    } else if (key == "seed") {
      spec.seed = static_cast<std::uint64_t>(ParseDouble(value, key));
    } else if (key == "texture_cell") {
      spec.texture_cell = ParseDouble(value, key);
    } else if (key == "plane") {
      std::istringstream in(value);
      Surface s;
      s.kind = Surface::Kind::kPlane;
      if (!(in >> s.point.x() >> s.point.y() >> s.point.z() >> s.normal.x() >> s.normal.y() >>
            s.normal.z()) ||
          s.normal.norm() == 0.0) {
        ThrowInvalid("scene spec 'plane' needs a point and a non-zero normal");
      }
      s.normal.normalize();
      spec.surfaces.push_back(s);
    } else if (key == "sphere") {
      std::istringstream in(value);
      Surface s;
      s.kind = Surface::Kind::kSphere;
      if (!(in >> s.point.x() >> s.point.y() >> s.point.z() >> s.radius) || !(s.radius > 0)) {
        ThrowInvalid("scene spec 'sphere' needs a center and a positive radius");
      }
      spec.surfaces.push_back(s);
    } else {
      ThrowInvalid("unknown scene spec key '" + key + "'");
    }
  }
  CERMVS_CHECK(spec.num_views >= 2, "scene needs at least two views");
  CERMVS_CHECK(spec.width >= 8 && spec.height >= 8, "scene image is too small");
  CERMVS_CHECK(spec.focal > 0.0 && spec.ring_distance > 0.0 && spec.texture_cell > 0.0,
               "scene focal, ring distance and texture cell must be positive");
  CERMVS_CHECK(!spec.surfaces.empty(), "scene needs at least one surface");
  return spec;
}

std::string SceneSpec::ToText() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "views=" << num_views << "\ncenter_view=" << (center_view ? 1 : 0)
     << "\nring_tilt_deg=" << ring_tilt_deg << "\nring_phase_deg=" << ring_phase_deg
     << "\nring_distance=" << ring_distance << "\nlook_at=" << look_at.x() << " "
     << look_at.y() << " " << look_at.z() << "\nfocal=" << focal << "\nwidth=" << width
     << "\nheight=" << height << "\nseed=" << seed << "\ntexture_cell=" << texture_cell
     << "\n";
  for (const auto& s : surfaces) {
    if (s.kind == Surface::Kind::kPlane) {
      os << "plane=" << s.point.x() << " " << s.point.y() << " " << s.point.z() << " "
         << s.normal.x() << " " << s.normal.y() << " " << s.normal.z() << "\n";
    } else {
      os << "sphere=" << s.point.x() << " " << s.point.y() << " " << s.point.z() << " "
         << s.radius << "\n";
    }
  }
  return os.str();
}

std::vector<CameraModel> MakeRingCameras(const SceneSpec& spec) {
  std::vector<CameraModel> cams;
  const int ring_views = spec.center_view ? spec.num_views - 1 : spec.num_views;
  const double tilt = spec.ring_tilt_deg * std::numbers::pi / 180.0;
  for (int i = 0; i < spec.num_views; ++i) {
    double alpha = tilt;
    double theta = 0.0;
    if (spec.center_view && i == 0) {
      alpha = 0.0;
    } else {
      const int k = spec.center_view ? i - 1 : i;
      theta = (spec.ring_phase_deg * std::numbers::pi / 180.0) +
              2.0 * std::numbers::pi * k / std::max(ring_views, 1);
    }
    const Eigen::Vector3d center =
        spec.look_at + spec.ring_distance * Eigen::Vector3d(std::sin(alpha) * std::cos(theta),
                                                            std::sin(alpha) * std::sin(theta),
                                                            -std::cos(alpha));
    const Eigen::Vector3d forward = (spec.look_at - center).normalized();
    Eigen::Vector3d down_hint = Eigen::Vector3d::UnitY();
    if (std::abs(forward.dot(down_hint)) > 0.99) down_hint = Eigen::Vector3d::UnitX();
    const Eigen::Vector3d right = down_hint.cross(forward).normalized();
    const Eigen::Vector3d down = forward.cross(right);

    CameraModel cam;
    cam.R.row(0) = right.transpose();
    cam.R.row(1) = down.transpose();
    cam.R.row(2) = forward.transpose();
    cam.t = -cam.R * center;
    cam.K << spec.focal, 0.0, 0.5 * (spec.width - 1), 0.0, spec.focal, 0.5 * (spec.height - 1),
        0.0, 0.0, 1.0;
    cam.width = spec.width;
    cam.height = spec.height;
    cams.push_back(cam);
  }
  return cams;
}

std::optional<double> TraceDepth(std::span<const Surface> surfaces, const CameraModel& cam,
                                 double u, double v) {
  const Eigen::Vector3d ray_cam = cam.K.inverse() * Eigen::Vector3d(u, v, 1.0);
  const Eigen::Vector3d dir = cam.R.transpose() * (ray_cam / ray_cam.z());
  const Eigen::Vector3d origin = cam.Center();
  std::optional<double> best;
  for (const auto& s : surfaces) {
    const auto hit = s.Intersect(origin, dir);
    if (hit && (!best || *hit < *best)) best = hit;
  }
  return best;
}

double TextureValue(const Eigen::Vector3d& world, std::uint64_t seed, double cell) {
  double acc = 0.0;
  double norm = 0.0;
  double amplitude = 1.0;
  double frequency = 1.0 / cell;
  for (int octave = 0; octave < 4; ++octave) {
    acc += amplitude * ValueNoise(world * frequency, seed * 131 + octave);
    norm += amplitude;
    amplitude *= 0.5;
    frequency *= 2.0;
  }
  return acc / norm;
}

SyntheticScene GenerateScene(const SceneSpec& spec) {
  SyntheticScene scene;
  scene.spec = spec;
  scene.cams = MakeRingCameras(spec);
  for (const auto& cam : scene.cams) {
    FloatMap depth(cam.width, cam.height, 0.0f);
    RgbImage image(cam.width, cam.height);
    for (int y = 0; y < cam.height; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        const auto d = TraceDepth(spec.surfaces, cam, x, y);
        std::uint8_t* px = image.pixel(y, x);
        if (!d) continue;
        depth.at(y, x) = static_cast<float>(*d);
        const Eigen::Vector3d world = cam.Unproject(x, y, *d);
        for (int c = 0; c < 3; ++c) {
          const double tex = TextureValue(world, spec.seed * 7 + c, spec.texture_cell);
          const double stretched = 0.5 + 3.0 * (tex - 0.5);
          px[c] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(stretched, 0.0, 1.0)));
        }
      }
    }
    scene.gt_depth.push_back(std::move(depth));
    scene.images.push_back(std::move(image));
  }
  return scene;
}

Eigen::MatrixXd RandomOrthonormal(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(n, n);
  for (int c = 0; c < n; ++c) {
    for (int r = 0; r < n; ++r) g(r, c) = normal(rng);
  }
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int c = 0; c < n; ++c) {
    if (r(c, c) < 0) q.col(c) *= -1.0;
  }
  return q;
}

FeatureRendering RenderFeatures(const SyntheticScene& scene, int view, int downsize,
                                int channels, std::uint64_t seed) {
  CERMVS_CHECK(view >= 0 && view < static_cast<int>(scene.cams.size()), "view out of range");
  CERMVS_CHECK(downsize >= 1 && channels >= 1, "bad feature rendering parameters");
  const CameraModel& cam = scene.cams[view];
  const int fw = cam.width / downsize;
  const int fh = cam.height / downsize;
  const Eigen::MatrixXd mixing = RandomOrthonormal(channels, seed);
  FeatureRendering out{Tensor({static_cast<std::size_t>(channels), static_cast<std::size_t>(fh),
                               static_cast<std::size_t>(fw)},
                              0.0f),
                       FloatMap(fw, fh, 0.0f)};
  Eigen::VectorXd raw(channels);
  for (int y = 0; y < fh; ++y) {
    for (int x = 0; x < fw; ++x) {
      const double u = FeatureToImage(x, downsize);
      const double v = FeatureToImage(y, downsize);
      const auto d = TraceDepth(scene.spec.surfaces, cam, u, v);
      if (!d) continue;
      out.depth.at(y, x) = static_cast<float>(*d);
      const Eigen::Vector3d world = cam.Unproject(u, v, *d);
      for (int c = 0; c < channels; ++c) {
        raw(c) = TextureValue(world, seed * 1000003 + c, scene.spec.texture_cell) - 0.5;
      }
      const double norm = raw.norm();
      if (norm > 0.0) raw /= norm;
      const Eigen::VectorXd mixed = mixing * raw;
      for (int c = 0; c < channels; ++c) out.features.at(c, y, x) = static_cast<float>(mixed(c));
    }
  }
  return out;
}

std::vector<double> BruteForceCost(const CameraModel& ref_cam, const CameraModel& nbr_cam,
                                   const Tensor& ref_feat, const Tensor& nbr_feat,
                                   int feature_x, int feature_y,
                                   std::span<const double> disparities, int downsize) {
  const int channels = static_cast<int>(ref_feat.dim(0));
  const int fh = static_cast<int>(nbr_feat.dim(1));
  const int fw = static_cast<int>(nbr_feat.dim(2));
  const double u = feature_x * downsize + 0.5 * (downsize - 1);
  const double v = feature_y * downsize + 0.5 * (downsize - 1);
  std::vector<double> out;
  for (const double sigma : disparities) {
    double corr = 0.0;
    // sigma == 0 is the point at infinity: only the ray direction survives.
    Eigen::Vector3d nbr_h;
    const Eigen::Vector3d ray = ref_cam.K.inverse() * Eigen::Vector3d(u, v, 1.0);
    if (sigma > 0.0) {
      const Eigen::Vector3d cam_pt = ray / sigma;
      const Eigen::Vector3d world = ref_cam.R.transpose() * (cam_pt - ref_cam.t);
      nbr_h = nbr_cam.K * (nbr_cam.R * world + nbr_cam.t);
    } else {
      nbr_h = nbr_cam.K * (nbr_cam.R * (ref_cam.R.transpose() * ray));
    }
    if (nbr_h.z() > 1e-9 * (sigma > 0.0 ? 1.0 / sigma : 1.0)) {
      const double px = (nbr_h.x() / nbr_h.z() - 0.5 * (downsize - 1)) / downsize;
      const double py = (nbr_h.y() / nbr_h.z() - 0.5 * (downsize - 1)) / downsize;
      if (px >= 0 && py >= 0 && px <= fw - 1 && py <= fh - 1) {
        const int x0 = static_cast<int>(std::floor(px));
        const int y0 = static_cast<int>(std::floor(py));
        const double ax = px - x0, ay = py - y0;
        for (int c = 0; c < channels; ++c) {
          double sample = 0.0;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const double w = (dx ? ax : 1 - ax) * (dy ? ay : 1 - ay);
              if (w == 0.0) continue;
              const int xx = std::min(x0 + dx, fw - 1);
              const int yy = std::min(y0 + dy, fh - 1);
              sample += w * nbr_feat.at(c, yy, xx);
            }
          }
          corr += static_cast<double>(ref_feat.at(c, feature_y, feature_x)) * sample;
        }
        corr /= std::sqrt(static_cast<double>(channels));
      }
    }
    out.push_back(corr);
  }
  return out;
}

bool IsVisible(std::span<const Surface> surfaces, const CameraModel& cam,
               const Eigen::Vector3d& world) {
  const Eigen::Vector3d proj = cam.Project(world);
  if (!(proj.z() > 0.0)) return false;
  if (proj.x() < 0 || proj.y() < 0 || proj.x() > cam.width - 1 || proj.y() > cam.height - 1) {
    return false;
  }
  const auto d = TraceDepth(surfaces, cam, proj.x(), proj.y());
  return d && std::abs(*d - proj.z()) <= 1e-6 * proj.z() + 1e-6;
}

PointCloud GroundTruthCloud(const SyntheticScene& scene, int stride, int min_views) {
  CERMVS_CHECK(stride >= 1, "GT cloud stride must be positive");
  PointCloud cloud;
  for (std::size_t v = 0; v < scene.cams.size(); ++v) {
    const CameraModel& cam = scene.cams[v];
    for (int y = 0; y < cam.height; y += stride) {
      for (int x = 0; x < cam.width; x += stride) {
        const float d = scene.gt_depth[v].at(y, x);
        if (!(d > 0.0f)) continue;
        const Eigen::Vector3d world = cam.Unproject(x, y, d);
        int seen = 0;
        for (const auto& other : scene.cams) {
          if (IsVisible(scene.spec.surfaces, other, world)) ++seen;
        }
        if (seen < min_views) continue;
        const std::uint8_t* px = scene.images[v].pixel(y, x);
        cloud.push_back({static_cast<float>(world.x()), static_cast<float>(world.y()),
                         static_cast<float>(world.z()), px[0], px[1], px[2]});
      }
    }
  }
  return cloud;
}

void WriteSceneDirectory(const std::filesystem::path& dir, const SyntheticScene& scene) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "cams");
  fs::create_directories(dir / "gt_depth");
  const int n = static_cast<int>(scene.cams.size());
  NeighborLists lists;
  std::ofstream sparse(dir / "sparse_depths.txt");
  if (!sparse) ThrowIo("cannot write " + (dir / "sparse_depths.txt").string());
  sparse << std::setprecision(17);
  for (int v = 0; v < n; ++v) {
    WritePpm(dir / "images" / (ViewStem(v) + ".ppm"), scene.images[v]);
    WritePfm(dir / "gt_depth" / (ViewStem(v) + ".pfm"), scene.gt_depth[v]);
    float dmin = 0.0f;
    for (const float d : scene.gt_depth[v].values) {
      if (d > 0.0f && (dmin == 0.0f || d < dmin)) dmin = d;
    }
    CameraFile cf{scene.cams[v], dmin, 0.0};
    WriteCameraFile(dir / "cams" / (ViewStem(v) + "_cam.txt"), cf);
    sparse << v << " " << dmin << "\n";

    // Neighbors ordered by camera-center distance, nearest first.
    std::vector<int> others;
    for (int w = 0; w < n; ++w) {
      if (w != v) others.push_back(w);
    }
    const Eigen::Vector3d c = scene.cams[v].Center();
    std::stable_sort(others.begin(), others.end(), [&](int a, int b) {
      return (scene.cams[a].Center() - c).norm() < (scene.cams[b].Center() - c).norm();
    });
    lists[v] = others;
  }
  WriteNeighborLists(dir / "neighbors.txt", lists);
  WritePly(dir / "gt.ply", GroundTruthCloud(scene, 1, 3));
  std::ofstream cfg(dir / "scene.cfg");
  cfg << scene.spec.ToText();
  if (!cfg) ThrowIo("cannot write " + (dir / "scene.cfg").string());
}

}  // namespace cermvs

namespace cermvs {

namespace {

RgbImage CropImage(const RgbImage& src, int x0, int y0, int w, int h) {
  RgbImage out(w, h);
  for (int y = 0; y < h; ++y) {
    std::copy_n(src.pixel(y0 + y, x0), static_cast<std::size_t>(w) * 3, out.pixel(y, 0));
  }
  return out;
}

CameraModel CropCamera(const CameraModel& cam, int x0, int y0, int w, int h) {
  CameraModel out = cam;
  out.K(0, 2) -= x0;
  out.K(1, 2) -= y0;
  out.width = w;
  out.height = h;
  return out;
}

// Rows are the 3x3 zero-padded patches of h at every pixel in decoder weight
// order, followed by a constant 1 for the bias.
Eigen::MatrixXd DecoderPatches(const Tensor& h) {
  const int dh = static_cast<int>(h.dim(0));
  const int height = static_cast<int>(h.dim(1));
  const int width = static_cast<int>(h.dim(2));
  Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(height * width, 9 * dh + 1);
  for (int c = 0; c < dh; ++c) {
    const float* hc = h.channel(c);
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const int col = (c * 3 + ky) * 3 + kx;
        for (int y = 0; y < height; ++y) {
          const int iy = y + ky - 1;
          if (iy < 0 || iy >= height) continue;
          for (int x = 0; x < width; ++x) {
            const int ix = x + kx - 1;
            if (ix >= 0 && ix < width) rows(y * width + x, col) = hc[iy * width + ix];
          }
        }
      }
    }
  }
  rows.col(9 * dh).setOnes();
  return rows;
}

}  // namespace

TrainingSample MakeTrainingSample(const SyntheticScene& scene, int view,
                                  std::span<const int> neighbors, const WeightSet& weights,
                                  int crop_x, int crop_y, int crop_w, int crop_h,
                                  double scale, int upsample) {
  const int n = static_cast<int>(scene.cams.size());
  CERMVS_CHECK(view >= 0 && view < n, "training view out of range");
  CERMVS_CHECK(!neighbors.empty(), "training sample needs neighbors");
  CERMVS_CHECK(upsample >= 1, "upsampling factor must be positive");
  const CameraModel full = scene.cams[view].Resized(upsample);
  CERMVS_CHECK(crop_x % 4 == 0 && crop_y % 4 == 0 && crop_w % 4 == 0 && crop_h % 4 == 0 &&
                   crop_x >= 0 && crop_y >= 0 && crop_w > 0 && crop_h > 0 &&
                   crop_x + crop_w <= full.width && crop_y + crop_h <= full.height,
               "training crop must be inside the image and aligned to 4 px");
  // Every view is cropped to the same window: the cost volume needs equal
  // feature shapes, and the ring converges on the crop's surface region.
  std::vector<int> views = {view};
  views.insert(views.end(), neighbors.begin(), neighbors.end());
  std::vector<CameraModel> cams;
  TrainingSample s;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const int v = views[i];
    CERMVS_CHECK(v >= 0 && v < n && (i == 0 || v != view), "training neighbor out of range");
    cams.push_back(CropCamera(scene.cams[v].Resized(upsample), crop_x, crop_y, crop_w, crop_h));
    const RgbImage src = upsample > 1 ? UpsampleImage(scene.images[v], upsample) : scene.images[v];
    const Tensor img = ImageToTensor(CropImage(src, crop_x, crop_y, crop_w, crop_h));
    if (i == 0) {
      s.ref_feat = EncodeFeatures(img, weights);
      s.context = EncodeContext(img, weights);
    } else {
      s.nbr_feats.push_back(EncodeFeatures(img, weights));
    }
  }
  s.cams = ApplySceneScale(cams, SceneScale{scale, ScaleMode::kNone});

  constexpr int kDs = 4;
  s.gt = DisparityField(crop_w / kDs, crop_h / kDs, 0.0f);
  for (int y = 0; y < s.gt.height; ++y) {
    for (int x = 0; x < s.gt.width; ++x) {
      const auto d = TraceDepth(scene.spec.surfaces, cams[0], FeatureToImage(x, kDs),
                                FeatureToImage(y, kDs));
      if (d) s.gt.at(y, x) = static_cast<float>(1.0 / (*d * scale));
    }
  }
  return s;
}

double MeanAbsDisparityError(const DisparityField& pred, const DisparityField& gt) {
  CERMVS_CHECK(pred.SameGrid(gt), "prediction grid does not match GT");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!(gt.values[i] > 0.0f)) continue;
    sum += std::abs(static_cast<double>(pred.values[i]) - gt.values[i]);
    ++count;
  }
  CERMVS_CHECK(count > 0, "GT has no valid pixel");
  return sum / static_cast<double>(count);
}

WeightSet FitTinyCheckpoint(std::span<const TrainingSample> samples, WeightSet init,
                            const FitOptions& options, FitReport* report) {
  CERMVS_CHECK(!samples.empty(), "fitting needs at least one sample");
  CERMVS_CHECK(options.steps >= 0 && options.learning_rate > 0.0, "bad fitting options");
  WeightSet w = std::move(init);
  const ModelConfig& c = w.config;
  FitReport local;
  FitReport& rep = report ? *report : local;
  rep = FitReport{};
  const std::array<double, 2> increments = {c.coarse_increment(), c.fine_increment};
  const std::array<std::string, 2> decoders = {"dec1", "dec2"};

  for (int step = 0; step < options.steps; ++step) {
    LossConfig loss_cfg = options.loss;
    loss_cfg.w = WSchedule(step, options.steps);
    std::array<Tensor, 2> grad_w = {Tensor(w.Get("dec1.weight").shape(), 0.0f),
                                    Tensor(w.Get("dec2.weight").shape(), 0.0f)};
    std::array<double, 2> grad_b = {0.0, 0.0};
    const int nf = 9 * c.hidden_dim + 1;
    std::array<Eigen::MatrixXd, 2> moments = {Eigen::MatrixXd::Zero(nf, nf),
                                             Eigen::MatrixXd::Zero(nf, nf)};
    std::array<double, 2> rows = {0.0, 0.0};
    double total = 0.0;
    for (const auto& s : samples) {
      InferenceTrace trace;
      RunInferenceOnFeatures(s.ref_feat, s.context, s.nbr_feats, s.cams, w, &trace);
      const LossResult loss = ComputeLoss(trace.preds, s.gt, loss_cfg);
      total += loss.total;
      // Adjoint of d_t under d_t = max(0, d_{t-1} + delta_t), hidden states fixed.
      const int steps_t = static_cast<int>(trace.preds.size());
      DisparityField adjoint(s.gt.width, s.gt.height, 0.0f);
      for (int t = steps_t - 1; t >= 0; --t) {
        for (std::size_t p = 0; p < adjoint.size(); ++p) {
          adjoint.values[p] += loss.grads[t].values[p];
        }
        DisparityField upstream = adjoint;
        for (std::size_t p = 0; p < adjoint.size(); ++p) {
          if (trace.clamped[t][p]) {
            upstream.values[p] = 0.0f;
            adjoint.values[p] = 0.0f;
          }
        }
        const int stage = t < c.iters_stage1 ? 0 : 1;
        if (options.precondition) {
          const Eigen::MatrixXd patches = DecoderPatches(trace.hidden[t]);
          moments[stage].selfadjointView<Eigen::Lower>().rankUpdate(patches.transpose());
          rows[stage] += static_cast<double>(patches.rows());
        }
        const DecoderGradient g = DecoderWeightGradient(trace.hidden[t], upstream);
        for (std::size_t k = 0; k < g.weight.size(); ++k) {
          grad_w[stage][k] += static_cast<float>(g.weight[k] * increments[stage]);
        }
        grad_b[stage] += g.bias * increments[stage];
      }
    }
    total /= static_cast<double>(samples.size());
    if (step == 0) rep.initial_loss = total;
    rep.losses.push_back(total);
    if (step > 0 && total > 10.0 * rep.initial_loss) {
      ThrowNumerical("decoder fitting diverged at step " + std::to_string(step) + ": loss " +
                     std::to_string(total) + " exceeds 10x the initial " +
                     std::to_string(rep.initial_loss));
    }
    // The loss is measured in units of each stage's disparity increment.
    const double decay = 1.0 / (1.0 + 3.0 * step / std::max(1, options.steps));
    for (int stage = 0; stage < 2; ++stage) {
      const double lr = options.learning_rate * decay /
                        (increments[stage] * static_cast<double>(samples.size()));
      Eigen::VectorXd dir(nf);
      for (int k = 0; k + 1 < nf; ++k) dir[k] = grad_w[stage][static_cast<std::size_t>(k)];
      dir[nf - 1] = grad_b[stage];
      if (options.precondition && rows[stage] > 0.0) {
        Eigen::MatrixXd m = moments[stage].selfadjointView<Eigen::Lower>();
        m /= rows[stage];
        m.diagonal().array() += options.ridge * m.diagonal().mean() + 1e-12;
        dir = m.ldlt().solve(dir);
      }
      Tensor& kw = w.Mutable(decoders[stage] + ".weight");
      for (std::size_t k = 0; k < kw.size(); ++k) {
        kw[k] = static_cast<float>(kw[k] - lr * dir[static_cast<Eigen::Index>(k)]);
      }
      Tensor& kb = w.Mutable(decoders[stage] + ".bias");
      kb[0] = static_cast<float>(kb[0] - lr * dir[nf - 1]);
    }
  }
  return w;
}

}  // namespace cermvs
