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

// Fits the decoders of the bundled tiny checkpoint on synthetic scenes.
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <vector>

#include "cermvs/error.h"
#include "cermvs/synth.h"
#include "cermvs/update.h"

namespace {

using namespace cermvs;

struct Recipe {
  std::uint64_t seed = 42;
  int steps = 40;
  double lr = 0.1;
  bool precondition = true;
  InitScales scales;
  double focal = 1000.0;
  double tilt = 30.0;
  double cell = 16.0;
  int scenes = 8;
  bool hr = true;
  int hidden = 32;
  int corr1 = 48;
  int corr2 = 32;
  int refs = 5;
};

SceneSpec TrainingSpec(int index, const Recipe& r, bool held_out) {
  SceneSpec spec;
  spec.num_views = 5;
  spec.focal = r.focal;
  spec.ring_tilt_deg = r.tilt;
  spec.texture_cell = r.cell;
  spec.seed = held_out ? 1000 + index : 1 + index;
  spec.ring_phase_deg = 13.0 * spec.seed;
  Surface plane;
  plane.point = {0, 0, 600.0 + 10.0 * (index % 3)};
  plane.normal = held_out ? Eigen::Vector3d(0, 0, -1)
                          : Eigen::Vector3d(0.1 * ((index % 5) - 2), 0.15 * ((index % 3) - 1), -1)
                                .normalized();
  spec.surfaces = {plane};
  if (!held_out && index % 2 == 1) {
    Surface s;
    s.kind = Surface::Kind::kSphere;
    s.point = {20.0 * (index % 3) - 20.0, 10.0, 760.0};
    s.radius = 220.0;
    spec.surfaces.push_back(s);
  }
  return spec;
}

ModelConfig TinyConfig(const Recipe& r) {
  ModelConfig c;
  c.feature_dim = 32;
  c.hidden_dim = r.hidden;
  c.encoder_widths = {16, 24, 32};
  c.corr_enc1 = r.corr1;
  c.corr_enc2 = r.corr2;
  c.disp_enc = 16;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  Recipe r;
  std::string out = "data/tiny/tiny.manifest";
  CLI::App app{"Fit the tiny decoder checkpoint"};
  app.add_option("--out", out, "manifest path");
  app.add_option("--seed", r.seed, "weight seed");
  app.add_option("--steps", r.steps, "gradient steps");
  app.add_option("--lr", r.lr, "learning rate");
  app.add_option("--precondition", r.precondition, "use the patch second-moment preconditioner");
  app.add_option("--corr", r.scales.corr, "Encoder_c gain");
  app.add_option("--gru", r.scales.gru, "GRU gain");
  app.add_option("--disparity", r.scales.disparity, "Encoder_d gain");
  app.add_option("--context", r.scales.context, "context projection gain");
  app.add_option("--residual", r.scales.residual, "residual branch gain");
  app.add_option("--focal", r.focal, "training focal length");
  app.add_option("--tilt", r.tilt, "training ring tilt");
  app.add_option("--cell", r.cell, "training texture cell");
  app.add_option("--scenes", r.scenes, "training scenes");
  app.add_option("--hr", r.hr, "also train on 2x crops");
  app.add_option("--hidden", r.hidden, "hidden state width");
  app.add_option("--corr1", r.corr1, "first Encoder_c width");
  app.add_option("--corr2", r.corr2, "second Encoder_c width");
  app.add_option("--refs", r.refs, "reference views per training scene");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto t0 = std::chrono::steady_clock::now();
    const WeightSet init = InitWeights(TinyConfig(r), r.seed, r.scales);
    std::vector<TrainingSample> train;
    for (int i = 0; i < r.scenes; ++i) {
      const SyntheticScene scene = GenerateScene(TrainingSpec(i, r, false));
      for (int ref = 0; ref < r.refs; ++ref) {
        std::vector<int> nbrs;
        for (int v = 0; v < 5; ++v) {
          if (v != ref) nbrs.push_back(v);
        }
        train.push_back(MakeTrainingSample(scene, ref, nbrs, init, 80, 60, 160, 120));
        if (r.hr) {
          train.push_back(MakeTrainingSample(scene, ref, nbrs, init, 240, 180, 160, 120, 1.0, 2));
        }
      }
    }
    const std::vector<int> nbrs = {1, 2, 3, 4};
    FitOptions opt;
    opt.steps = r.steps;
    opt.learning_rate = r.lr;
    opt.precondition = r.precondition;
    FitReport report;
    const WeightSet fitted = FitTinyCheckpoint(train, init, opt, &report);
    for (std::size_t i = 0; i < report.losses.size(); ++i) {
      std::printf("step %zu loss %.6g\n", i, report.losses[i]);
    }
    const SyntheticScene held = GenerateScene(TrainingSpec(0, r, true));
    for (const int up : {1, 2}) {
      const TrainingSample s = MakeTrainingSample(held, 0, nbrs, init, 0, 0, 320 * up, 240 * up, 1.0, up);
      InferenceTrace trace;
      RunInferenceOnFeatures(s.ref_feat, s.context, s.nbr_feats, s.cams, fitted, &trace);
      const DisparityField zero(s.gt.width, s.gt.height, 0.0f);
      std::printf("held-out x%d: zero %.4g, per iteration", up, MeanAbsDisparityError(zero, s.gt));
      for (const auto& p : trace.preds) std::printf(" %.3g", MeanAbsDisparityError(p, s.gt));
      std::printf("\n");
    }
    SaveCheckpoint(out, fitted);
    std::printf("wrote %s in %.1f s\n", out.c_str(),
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
