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

#include "cermvs/cost_volume.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <vector>

#include "cermvs/error.h"
#include "cermvs/synth.h"
#include "doctest.h"
#include "test_util.h"

namespace cermvs {
namespace {

using testing::RandomTensor;

SyntheticScene SmallPlaneScene(std::uint64_t seed) {
  SceneSpec spec;
  spec.num_views = 3;
  spec.width = 160;
  spec.height = 120;
  spec.focal = 300;
  spec.seed = seed;
  Surface plane;
  plane.point = {0, 0, 640};
  plane.normal = Eigen::Vector3d(0.1, -0.2, -1).normalized();
  spec.surfaces = {plane};
  return GenerateScene(spec);
}

CameraModel Camera(double f, int w, int h) {
  CameraModel cam;
  cam.K << f, 0, (w - 1) / 2.0, 0, f, (h - 1) / 2.0, 0, 0, 1;
  cam.width = w;
  cam.height = h;
  return cam;
}

TEST_CASE("identity view gives a constant correlation along disparity") {
  std::mt19937 rng(21);
  const Tensor feat = RandomTensor({8, 6, 7}, rng);
  const CameraModel cam = Camera(100, 28, 24);
  const std::vector<Tensor> nbrs = {feat};
  const std::vector<CameraModel> cams = {cam, cam};
  const Stage1Params params{.num_samples = 16, .max_disparity = 0.0025, .num_levels = 3,
                            .downsize = 4};
  const CostVolumeStack stack = BuildStage1Volume(feat, nbrs, cams, params);
  REQUIRE(stack.num_levels() == 3);
  CHECK(stack.levels[1].dim(3) == 8);
  CHECK(stack.levels[2].dim(3) == 4);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 7; ++x) {
      double norm2 = 0.0;
      for (int c = 0; c < 8; ++c) norm2 += static_cast<double>(feat.at(c, y, x)) * feat.at(c, y, x);
      const double expected = norm2 / std::sqrt(8.0);
      for (int j = 0; j < 16; ++j) {
        CHECK(stack.levels[0].at(0, y, x, j) == doctest::Approx(expected).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("orthogonal features correlate to zero") {
  Tensor ref({4, 5, 5}, 0.0f), nbr({4, 5, 5}, 0.0f);
  for (std::size_t i = 0; i < 25; ++i) {
    ref[i] = 1.0f;            // channel 0
    nbr[25 + i] = 1.0f;       // channel 1
  }
  std::vector<CameraModel> cams = {Camera(100, 20, 20), Camera(100, 20, 20)};
  cams[1].t = Eigen::Vector3d(-10, 0, 0);
  const std::vector<Tensor> nbrs = {nbr};
  const CostVolumeStack stack = BuildStage1Volume(ref, nbrs, cams, {.num_samples = 8});
  for (const float v : stack.levels[0].values()) CHECK(v == 0.0f);
}

TEST_CASE("stage 1 matches the brute-force correlation oracle") {
  const SyntheticScene scene = SmallPlaneScene(5);
  constexpr int kDf = 16, kDs = 4;
  const auto ref = RenderFeatures(scene, 0, kDs, kDf, 9);
  const auto n1 = RenderFeatures(scene, 1, kDs, kDf, 9);
  const auto n2 = RenderFeatures(scene, 2, kDs, kDf, 9);
  const std::vector<Tensor> nbrs = {n1.features, n2.features};
  const Stage1Params params;
  const CostVolumeStack stack = BuildStage1Volume(ref.features, nbrs, scene.cams, params);
  std::vector<double> sigmas;
  for (int j = 0; j < params.num_samples; ++j) sigmas.push_back(Stage1Disparity(params, j));
  std::mt19937 rng(1);
  std::uniform_int_distribution<int> xs(0, 39), ys(0, 29);
  for (int trial = 0; trial < 40; ++trial) {
    const int x = xs(rng), y = ys(rng);
    for (int n = 0; n < 2; ++n) {
      const auto oracle = BruteForceCost(scene.cams[0], scene.cams[n + 1], ref.features,
                                         nbrs[n], x, y, sigmas, kDs);
      for (int j = 0; j < params.num_samples; ++j) {
        CHECK(std::abs(stack.levels[0].at(n, y, x, j) - oracle[j]) <= 1e-5);
      }
    }
  }
}

TEST_CASE("pooled levels are exact averages of the level below") {
  const SyntheticScene scene = SmallPlaneScene(6);
  const auto ref = RenderFeatures(scene, 0, 4, 8, 2);
  const auto nbr = RenderFeatures(scene, 1, 4, 8, 2);
  const std::vector<Tensor> nbrs = {nbr.features};
  const std::vector<CameraModel> cams = {scene.cams[0], scene.cams[1]};
  const CostVolumeStack stack = BuildStage1Volume(ref.features, nbrs, cams, {});
  for (int l = 0; l + 1 < stack.num_levels(); ++l) {
    CHECK(AvgPoolLastAxis(stack.levels[l]) == stack.levels[l + 1]);
  }
}

TEST_CASE("stage 1 is invariant to a global orthonormal feature transform") {
  const SyntheticScene scene = SmallPlaneScene(7);
  constexpr int kDf = 12;
  const auto ref = RenderFeatures(scene, 0, 4, kDf, 3);
  const auto nbr = RenderFeatures(scene, 2, 4, kDf, 3);
  const Eigen::MatrixXd q = RandomOrthonormal(kDf, 77);
  auto rotate = [&](const Tensor& t) {
    Tensor out(t.shape());
    const std::size_t plane = t.dim(1) * t.dim(2);
    for (std::size_t p = 0; p < plane; ++p) {
      Eigen::VectorXd v(kDf);
      for (int c = 0; c < kDf; ++c) v(c) = t[c * plane + p];
      const Eigen::VectorXd w = q * v;
      for (int c = 0; c < kDf; ++c) out[c * plane + p] = static_cast<float>(w(c));
    }
    return out;
  };
  const std::vector<CameraModel> cams = {scene.cams[0], scene.cams[2]};
  const std::vector<Tensor> a = {nbr.features};
  const std::vector<Tensor> b = {rotate(nbr.features)};
  const CostVolumeStack va = BuildStage1Volume(ref.features, a, cams, {});
  const CostVolumeStack vb = BuildStage1Volume(rotate(ref.features), b, cams, {});
  for (std::size_t i = 0; i < va.levels[0].size(); ++i) {
    CHECK(std::abs(va.levels[0][i] - vb.levels[0][i]) <= 1e-5);
  }
}

TEST_CASE("swapping roles with identical cameras leaves the volume unchanged") {
  std::mt19937 rng(22);
  const Tensor f = RandomTensor({6, 5, 5}, rng);
  const Tensor g = RandomTensor({6, 5, 5}, rng);
  const CameraModel cam = Camera(80, 20, 20);
  const std::vector<CameraModel> cams = {cam, cam};
  const std::vector<Tensor> ng = {g}, nf = {f};
  const auto a = BuildStage1Volume(f, ng, cams, {.num_samples = 8});
  const auto b = BuildStage1Volume(g, nf, cams, {.num_samples = 8});
  for (std::size_t i = 0; i < a.levels[0].size(); ++i) {
    CHECK(a.levels[0][i] == doctest::Approx(b.levels[0][i]).epsilon(1e-6));
  }
}

TEST_CASE("stage 1 rejects a camera count mismatch") {
  const Tensor f({4, 3, 3}, 1.0f);
  const std::vector<Tensor> nbrs = {f, f};
  const std::vector<CameraModel> cams = {Camera(50, 12, 12), Camera(50, 12, 12)};
  CHECK_THROWS_AS(BuildStage1Volume(f, nbrs, cams, {.num_samples = 8}), Error);
  CHECK_THROWS_AS(BuildStage1Volume(f, std::span<const Tensor>(nbrs).first(1), cams,
                                    {.num_samples = 6}),
                  Error);
}

TEST_CASE("stage 2 uses 44 samples centered on the current disparity") {
  const Stage2Params params;
  CHECK(params.num_samples() == 44);

  const SyntheticScene scene = SmallPlaneScene(8);
  const auto ref = RenderFeatures(scene, 0, 4, 8, 4);
  const auto nbr = RenderFeatures(scene, 1, 4, 8, 4);
  const std::vector<Tensor> nbrs = {nbr.features};
  const std::vector<CameraModel> cams = {scene.cams[0], scene.cams[1]};
  DisparityField centers(40, 30, 0.0f);
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> c(0.0f, 0.0025f);
  for (auto& v : centers.values) v = c(rng);
  centers.at(4, 4) = 0.0f;  // window reaching below zero
  const CostVolumeStack stack = BuildStage2Volume(ref.features, nbrs, cams, centers, params);
  REQUIRE(stack.centers.has_value());
  CHECK(stack.num_samples() == 44);
  CHECK(stack.base_increment == params.fine_increment);
  for (const auto& [x, y] : {std::pair{4, 4}, std::pair{17, 11}, std::pair{30, 25}}) {
    std::vector<double> sigmas;
    for (int j = 0; j < 44; ++j) {
      sigmas.push_back(std::max(0.0, static_cast<double>(centers.at(y, x)) +
                                         (j - 22) * params.fine_increment));
    }
    const auto oracle = BruteForceCost(cams[0], cams[1], ref.features, nbr.features, x, y,
                                       sigmas, 4);
    for (int j = 0; j < 44; ++j) CHECK(std::abs(stack.levels[0].at(0, y, x, j) - oracle[j]) <= 1e-5);
  }
  // Zero center: the lower 22 samples all clamp to sigma = 0 and agree.
  for (int j = 1; j <= 22; ++j) {
    CHECK(stack.levels[0].at(0, 4, 4, j) == stack.levels[0].at(0, 4, 4, 0));
  }
}

CostVolumeStack SingleVolume(Tensor level0, int levels, double inc) {
  CostVolumeStack stack;
  stack.levels = PoolVolume(std::move(level0), levels);
  stack.base_increment = inc;
  return stack;
}

TEST_CASE("lookup of a constant volume is constant") {
  const CostVolumeStack stack = SingleVolume(Tensor({1, 2, 3, 64}, 0.75f), 3, 1e-3);
  DisparityField d(3, 2, 0.030f);  // bin 30
  const Tensor out = LookupVolume(stack, d, 11);
  REQUIRE(out.shape() == Tensor::Shape{1, 33, 2, 3});
  for (const float v : out.values()) CHECK(v == doctest::Approx(0.75f));
}

TEST_CASE("lookup far outside the range is zero") {
  const CostVolumeStack stack = SingleVolume(Tensor({2, 2, 2, 64}, 1.0f), 3, 1e-3);
  const DisparityField d(2, 2, 1.0f);
  const Tensor out = LookupVolume(stack, d, 11);
  for (const float v : out.values()) CHECK(v == 0.0f);
}

TEST_CASE("lookup of a unit spike") {
  Tensor vol({1, 1, 1, 64}, 0.0f);
  vol[10] = 1.0f;
  const CostVolumeStack stack = SingleVolume(vol, 3, 2e-4);
  const DisparityField d(1, 1, static_cast<float>(10 * 2e-4));
  const Tensor out = LookupVolume(stack, d, 11);
  for (int i = 0; i < 11; ++i) CHECK(out[i] == doctest::Approx(i == 5 ? 1.0 : 0.0).epsilon(1e-5));
}

TEST_CASE("lookup on a bin center returns stored level-0 values") {
  std::mt19937 rng(23);
  const Tensor vol = RandomTensor({2, 3, 4, 32}, rng);
  const CostVolumeStack stack = SingleVolume(vol, 2, 0.25);
  DisparityField d(4, 3);
  std::uniform_int_distribution<int> bin(0, 31);
  for (auto& v : d.values) v = 0.25f * bin(rng);
  const Tensor out = LookupVolume(stack, d, 5);
  for (int n = 0; n < 2; ++n) {
    for (int y = 0; y < 3; ++y) {
      for (int x = 0; x < 4; ++x) {
        const int b = static_cast<int>(std::lround(d.at(y, x) / 0.25));
        for (int i = 0; i < 5; ++i) {
          const int j = b + i - 2;
          const float expected = (j >= 0 && j < 32) ? vol.at(n, y, x, j) : 0.0f;
          CHECK(out.at(n, i, y, x) == expected);
        }
      }
    }
  }
}

TEST_CASE("stage 2 lookup is relative to the window center") {
  Tensor vol({1, 1, 1, 44}, 0.0f);
  vol[22] = 1.0f;  // the sample at the center disparity
  CostVolumeStack stack = SingleVolume(vol, 3, 1e-5);
  stack.centers = DisparityField(1, 1, 0.0015f);
  const DisparityField d(1, 1, 0.0015f);
  const Tensor out = LookupVolume(stack, d, 11);
  CHECK(out[5] == doctest::Approx(1.0));
  CHECK(out[4] == doctest::Approx(0.0));
}

TEST_CASE("lookup rejects grid mismatch and even radius") {
  const CostVolumeStack stack = SingleVolume(Tensor({1, 2, 2, 16}, 1.0f), 2, 1e-3);
  CHECK_THROWS_AS(LookupVolume(stack, DisparityField(3, 2), 5), Error);
  CHECK_THROWS_AS(LookupVolume(stack, DisparityField(2, 2), 4), Error);
}

TEST_CASE("fusing neighbors") {
  std::mt19937 rng(24);
  const Tensor v = RandomTensor({1, 6, 2, 2}, rng);
  Tensor same({3, 6, 2, 2});
  for (int n = 0; n < 3; ++n) std::copy(v.values().begin(), v.values().end(), same.values().begin() + n * 24);
  const Tensor fused = FuseViews(same);
  for (std::size_t i = 0; i < 24; ++i) CHECK(fused[i] == doctest::Approx(v[i]).epsilon(1e-7));

  Tensor opposite({2, 6, 2, 2});
  for (std::size_t i = 0; i < 24; ++i) {
    opposite[i] = v[i];
    opposite[24 + i] = -v[i];
  }
  const Tensor cancelled = FuseViews(opposite);
  for (const float x : cancelled.values()) CHECK(x == 0.0f);

  const Tensor three = RandomTensor({3, 6, 2, 2}, rng);
  const Tensor mean = FuseViews(three);
  for (std::size_t i = 0; i < 24; ++i) {
    const double brute = (static_cast<double>(three[i]) + three[24 + i] + three[48 + i]) / 3.0;
    CHECK(std::abs(mean[i] - brute) <= 1e-6);
  }
}

TEST_CASE("fusing neighbors is bitwise permutation invariant") {
  std::mt19937 rng(25);
  const Tensor t = RandomTensor({5, 4, 3, 3}, rng, -100.0f, 100.0f);
  std::vector<int> order = {0, 1, 2, 3, 4};
  const Tensor reference = FuseViews(t);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(order.begin(), order.end(), rng);
    Tensor perm(t.shape());
    for (int n = 0; n < 5; ++n) {
      std::copy_n(t.values().begin() + order[n] * 36, 36, perm.values().begin() + n * 36);
    }
    CHECK(FuseViews(perm) == reference);
  }
}

TEST_CASE("memory estimate") {
  const MemoryEstimate table = EstimateMemory(64, 44, 320, 3, 60, 80, 4);
  CHECK(table.ratio() == doctest::Approx(0.3375).epsilon(1e-12));
  CHECK(StackElements(64, 1, 10, 20, 3) == 64u * 10 * 20 * 3);
  const MemoryEstimate doubled = EstimateMemory(64, 44, 320, 3, 120, 160, 4);
  CHECK(doubled.cascaded_elements == 4 * table.cascaded_elements);
  CHECK(doubled.non_cascaded_elements == 4 * table.non_cascaded_elements);
}

TEST_CASE("cost volumes round-trip through TNSR dumps") {
  std::mt19937 rng(26);
  const CostVolumeStack stack = SingleVolume(RandomTensor({2, 3, 3, 16}, rng), 3, 1e-3);
  const auto dir = std::filesystem::temp_directory_path() / "cermvs_cv_dump";
  std::filesystem::remove_all(dir);
  DumpCostVolume(dir, stack);
  CHECK(std::filesystem::exists(dir / "level2_nbr1.tnsr"));
  const CostVolumeStack back = LoadCostVolume(dir, 3, 2, 1e-3);
  for (int l = 0; l < 3; ++l) CHECK(back.levels[l] == stack.levels[l]);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace cermvs
