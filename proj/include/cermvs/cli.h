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

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cermvs/geometry.h"
#include "cermvs/io.h"

namespace cermvs {

// Every tunable of the pipeline. Config files use the command-line flag names
// as keys ("scale-mode=auto"); flags override the file, the file overrides
// these defaults, and CERMVS_THREADS overrides --threads.
struct PipelineConfig {
  int threads = 1;

  // depth
  std::filesystem::path weights;
  std::string resolution = "native";  // native | 2x
  int views = -1;                     // neighbors per view; -1 picks 15 native, 25 at 2x
  std::string scale_mode = "auto";    // auto | gt-median-600 | sparse-min-400 | none

  // fuse
  double t = 0.02;

  // stitch
  double p = 25.0;
  double t1 = 1.0;
  double t2 = 0.01;
  int nmin = 2;
  std::string stitch_resolution = "native";  // native | half

  // eval
  double tau = 0.0;
  double max_dist = 20.0;

  // bench
  int coarse_samples = 64;
  int levels = 3;
  int radius = 11;
  int full_range_samples = 320;
  int width = 1600;
  int height = 1200;
  int neighbors = 10;

  // synth: overrides the spec's texture seed when >= 0
  long long seed = -1;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalidInput = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitIo = 4;

// Scale chosen for one reference view, stored next to its disparity map.
struct ScaleRecord {
  double factor = 1.0;
  ScaleMode mode = ScaleMode::kNone;
};
void WriteScaleRecord(const std::filesystem::path& path, const ScaleRecord& record);
ScaleRecord ReadScaleRecord(const std::filesystem::path& path);

FloatMap DisparityToMap(const DisparityField& d);
DisparityField MapToDisparity(const FloatMap& map);

// Runs fn(i) for i in [0, n) on `threads` workers. Each index is processed by
// exactly one worker, so per-index outputs are independent of the pool size.
void ParallelFor(int n, int threads, const std::function<void(int)>& fn);

// Entry point shared by the executable and the tests. args excludes argv[0].
int RunCli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace cermvs
