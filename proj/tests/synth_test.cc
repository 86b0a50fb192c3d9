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

#include <cmath>
#include <filesystem>

#include "cermvs/error.h"
#include "doctest.h"

namespace cermvs {
namespace {

SceneSpec PlaneSpec() {
  SceneSpec spec;
  spec.width = 96;
  spec.height = 72;
  spec.focal = 180;
  Surface plane;
  plane.point = {0, 0, 600};
  plane.normal = {0, 0, -1};
  spec.surfaces = {plane};
  return spec;
}

TEST_CASE("ring cameras look at the target") {
  const SceneSpec spec = PlaneSpec();
  const auto cams = MakeRingCameras(spec);
  REQUIRE(cams.size() == 5);
  for (const auto& cam : cams) {
    CHECK_NOTHROW(cam.Validate());
    const Eigen::Vector3d p = cam.Project(spec.look_at);
    CHECK(p.x() == doctest::Approx((spec.width - 1) / 2.0));
    CHECK(p.y() == doctest::Approx((spec.height - 1) / 2.0));
    CHECK(p.z() == doctest::Approx(spec.ring_distance));
  }
  CHECK(cams[0].Center().norm() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("ray tracing hits planes and spheres") {
  Surface sphere;
  sphere.kind = Surface::Kind::kSphere;
  sphere.point = {0, 0, 500};
  sphere.radius = 100;
  CameraModel cam;
  cam.K << 100, 0, 50, 0, 100, 50, 0, 0, 1;
  cam.width = cam.height = 101;
  const std::vector<Surface> s = {sphere};
  CHECK(*TraceDepth(s, cam, 50, 50) == doctest::Approx(400));
  CHECK_FALSE(TraceDepth(s, cam, 0, 0).has_value());
  Surface plane;
  plane.point = {0, 0, 700};
  plane.normal = {0, 0, 1};
  const std::vector<Surface> both = {plane, sphere};
  CHECK(*TraceDepth(both, cam, 50, 50) == doctest::Approx(400));
  CHECK(*TraceDepth(both, cam, 0, 0) == doctest::Approx(700));
}

TEST_CASE("scene generation is deterministic and consistent across views") {
  const SyntheticScene a = GenerateScene(PlaneSpec());
  const SyntheticScene b = GenerateScene(PlaneSpec());
  CHECK(a.images == b.images);
  CHECK(a.gt_depth == b.gt_depth);
  // The GT depth of view 0 reprojects into view 1 with a matching depth.
  const auto& cam0 = a.cams[0];
  const auto& cam1 = a.cams[1];
  const Eigen::Vector3d world = cam0.Unproject(40, 30, a.gt_depth[0].at(30, 40));
  const Eigen::Vector3d p = cam1.Project(world);
  const auto traced = TraceDepth(a.spec.surfaces, cam1, p.x(), p.y());
  REQUIRE(traced.has_value());
  CHECK(*traced == doctest::Approx(p.z()).epsilon(1e-9));
}

TEST_CASE("rendered features are unit length and view independent") {
  const SyntheticScene scene = GenerateScene(PlaneSpec());
  const auto f0 = RenderFeatures(scene, 0, 4, 16, 5);
  const auto f1 = RenderFeatures(scene, 1, 4, 16, 5);
  REQUIRE(f0.features.shape() == Tensor::Shape{16, 18, 24});
  double norm2 = 0.0;
  for (int c = 0; c < 16; ++c) norm2 += std::pow(f0.features.at(c, 9, 12), 2);
  CHECK(norm2 == doctest::Approx(1.0).epsilon(1e-5));
  // Features depend only on the surface point: moving the ring leaves the
  // center view's features untouched.
  SceneSpec moved = PlaneSpec();
  moved.ring_tilt_deg = 25;
  const auto g0 = RenderFeatures(GenerateScene(moved), 0, 4, 16, 5);
  CHECK(g0.features == f0.features);
  CHECK_FALSE(f1.features == f0.features);
}

TEST_CASE("random orthonormal matrices") {
  const Eigen::MatrixXd q = RandomOrthonormal(9, 3);
  CHECK((q.transpose() * q - Eigen::MatrixXd::Identity(9, 9)).norm() <= 1e-12);
  CHECK(RandomOrthonormal(9, 3) == q);
}

TEST_CASE("scene spec parsing") {
  const KeyValues kv = ParseKeyValues(
      "views=4\nfocal=250\nplane=0 0 600 0 0 -2\nsphere=0 0 550 40\nseed=9\n", "t");
  const SceneSpec spec = SceneSpec::FromKeyValues(kv);
  CHECK(spec.num_views == 4);
  REQUIRE(spec.surfaces.size() == 2);
  CHECK(spec.surfaces[0].normal.z() == doctest::Approx(-1.0));
  const SceneSpec again = SceneSpec::FromKeyValues(ParseKeyValues(spec.ToText(), "t"));
  CHECK(again.ToText() == spec.ToText());
  CHECK_THROWS_AS(SceneSpec::FromKeyValues(ParseKeyValues("bogus=1\n", "t")), Error);
  CHECK_THROWS_AS(SceneSpec::FromKeyValues(ParseKeyValues("views=3\n", "t")), Error);
}

TEST_CASE("scene directories contain every artifact") {
  SceneSpec spec = PlaneSpec();
  spec.num_views = 3;
  const SyntheticScene scene = GenerateScene(spec);
  const auto dir = std::filesystem::temp_directory_path() / "cermvs_synth_scene";
  std::filesystem::remove_all(dir);
  WriteSceneDirectory(dir, scene);
  CHECK(ReadPpm(dir / "images" / "00000002.ppm") == scene.images[2]);
  CHECK(ReadPfm(dir / "gt_depth" / "00000001.pfm") == scene.gt_depth[1]);
  const CameraFile cf = ReadCameraFile(dir / "cams" / "00000000_cam.txt");
  CHECK(cf.camera.R.isApprox(scene.cams[0].R, 1e-14));
  CHECK(ReadNeighborLists(dir / "neighbors.txt").at(0).size() == 2);
  const PointCloud gt = ReadPly(dir / "gt.ply");
  CHECK_FALSE(gt.empty());
  for (std::size_t i = 0; i < gt.size(); i += 97) {
    const Eigen::Vector3d p(gt[i].x, gt[i].y, gt[i].z);

    CHECK(std::abs(p.z() - 600.0) <= 1e-3);
  }
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace cermvs
