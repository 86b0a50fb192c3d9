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

#include "cermvs/cli.h"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "cermvs/cost_volume.h"
#include "cermvs/error.h"
#include "cermvs/evalkit.h"
#include "cermvs/fusion.h"
#include "cermvs/stitch.h"
#include "cermvs/synth.h"
#include "cermvs/update.h"

namespace cermvs {

namespace fs = std::filesystem;

void WriteScaleRecord(const fs::path& path, const ScaleRecord& record) {
  std::ofstream out(path);
  if (!out) ThrowIo("cannot write " + path.string());
  out << std::setprecision(17) << "factor=" << record.factor
      << "\nmode=" << ScaleModeName(record.mode) << "\n";
  if (!out) ThrowIo("failed writing " + path.string());
}

ScaleRecord ReadScaleRecord(const fs::path& path) {
  const KeyValues kv = ReadKeyValues(path);
  const auto factor = kv.find("factor");
  const auto mode = kv.find("mode");
  if (factor == kv.end() || mode == kv.end()) {
    ThrowInvalid(path.string() + " needs 'factor' and 'mode'");
  }
  ScaleRecord r;
  try {
    r.factor = std::stod(factor->second);
  } catch (const std::exception&) {
    ThrowInvalid(path.string() + ": bad factor '" + factor->second + "'");
  }
  if (!(r.factor > 0.0)) ThrowInvalid(path.string() + ": scale factor must be positive");
  r.mode = ParseScaleMode(mode->second);
  return r;
}

FloatMap DisparityToMap(const DisparityField& d) {
  FloatMap m(d.width, d.height);
  m.values = d.values;
  return m;
}

DisparityField MapToDisparity(const FloatMap& map) {
  DisparityField d(map.width, map.height, 0.0f);
  d.values = map.values;
  d.Validate();
  return d;
}

void ParallelFor(int n, int threads, const std::function<void(int)>& fn) {
  const int workers = std::clamp(threads, 1, std::max(1, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

namespace {

// ---- scene directory access -------------------------------------------------

struct SceneDir {
  fs::path root;
  NeighborLists neighbors;

  explicit SceneDir(fs::path dir) : root(std::move(dir)) {
    if (!fs::is_directory(root)) ThrowIo("scene directory " + root.string() + " does not exist");
    neighbors = ReadNeighborLists(root / "neighbors.txt");
  }
  fs::path ImagePath(int v) const { return root / "images" / (ViewStem(v) + ".ppm"); }
  fs::path CameraPath(int v) const { return root / "cams" / (ViewStem(v) + "_cam.txt"); }
  fs::path GtDepthPath(int v) const { return root / "gt_depth" / (ViewStem(v) + ".pfm"); }

  // Camera files carry no image size; it comes from the view's image.
  CameraModel Camera(int v, const RgbImage& image) const {
    CameraModel cam = ReadCameraFile(CameraPath(v)).camera;
    cam.width = image.width;
    cam.height = image.height;
    cam.Validate();
    return cam;
  }
};

std::vector<double> SparseDepths(const fs::path& file, int view) {
  std::vector<double> depths;
  std::ifstream in(file);
  if (!in) return depths;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    int v = 0;
    double d = 0.0;
    if (row >> v >> d && v == view) depths.push_back(d);
  }
  return depths;
}

ScaleRecord ChooseScale(const SceneDir& scene, int view, const std::string& mode_name) {
  ScaleMode mode = ScaleMode::kNone;
  std::vector<double> depths;
  if (mode_name == "auto") {
    if (fs::exists(scene.GtDepthPath(view))) {
      mode = ScaleMode::kGtMedian600;
    } else if (!SparseDepths(scene.root / "sparse_depths.txt", view).empty()) {
      mode = ScaleMode::kSparseMin400;
    }
  } else {
    mode = ParseScaleMode(mode_name);
  }
  if (mode == ScaleMode::kGtMedian600) {
    const FloatMap gt = ReadPfm(scene.GtDepthPath(view));
    depths.assign(gt.values.begin(), gt.values.end());
  } else if (mode == ScaleMode::kSparseMin400) {
    depths = SparseDepths(scene.root / "sparse_depths.txt", view);
  }
  const SceneScale s = ComputeSceneScale(mode, depths);
  return {s.factor, s.mode};
}

// Views with a disparity map in `dir`, in ascending id order.
std::vector<int> ViewsInDirectory(const fs::path& dir) {
  if (!fs::is_directory(dir)) ThrowIo("depth directory " + dir.string() + " does not exist");
  std::vector<int> views;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".pfm") continue;
    const std::string stem = entry.path().stem().string();
    if (stem.empty() || !std::all_of(stem.begin(), stem.end(), ::isdigit)) continue;
    views.push_back(std::stoi(stem));
  }
  std::sort(views.begin(), views.end());
  if (views.empty()) ThrowIo("no disparity maps in " + dir.string());
  return views;
}

fs::path DisparityPath(const fs::path& dir, int v) { return dir / (ViewStem(v) + ".pfm"); }
fs::path ScalePath(const fs::path& dir, int v) { return dir / (ViewStem(v) + ".scale"); }

int ResolveThreads(int flag) {
  if (const char* env = std::getenv("CERMVS_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    ThrowInvalid(std::string("CERMVS_THREADS must be a positive integer, got '") + env + "'");
  }
  if (flag < 1) ThrowInvalid("--threads must be positive");
  return flag;
}

// ---- subcommands ------------------------------------------------------------

void CmdDepth(const PipelineConfig& cfg, const fs::path& scene_dir, const fs::path& out_dir,
              std::ostream& err) {
  if (cfg.resolution != "native" && cfg.resolution != "2x") {
    ThrowInvalid("--resolution must be 'native' or '2x'");
  }
  const bool hr = cfg.resolution == "2x";
  const int want = cfg.views >= 0 ? cfg.views : (hr ? 25 : 15);
  if (want < 1) ThrowInvalid("--views must be at least 1");
  if (cfg.weights.empty()) ThrowInvalid("--weights is required");
  const WeightSet weights = LoadCheckpoint(cfg.weights);
  const SceneDir scene(scene_dir);
  fs::create_directories(out_dir);

  std::vector<int> refs;
  for (const auto& [v, _] : scene.neighbors) refs.push_back(v);
  std::vector<std::string> warnings(refs.size());
  ParallelFor(static_cast<int>(refs.size()), ResolveThreads(cfg.threads), [&](int i) {
    const int ref = refs[i];
    std::vector<int> nbrs = scene.neighbors.at(ref);
    if (static_cast<int>(nbrs.size()) < want) {
      warnings[i] = "view " + std::to_string(ref) + ": only " + std::to_string(nbrs.size()) +
                    " neighbors available, using all of them";
    }
    if (static_cast<int>(nbrs.size()) > want) nbrs.resize(want);
    if (nbrs.empty()) ThrowInvalid("view " + std::to_string(ref) + " has no neighbors");

    auto load = [&](int v, CameraModel& cam) {
      RgbImage img = ReadPpm(scene.ImagePath(v));
      cam = scene.Camera(v, img);
      if (hr) {
        img = UpsampleImage(img, 2);
        cam = cam.Resized(2.0);
      }
      return img;
    };
    std::vector<CameraModel> cams(nbrs.size() + 1);
    const RgbImage ref_img = load(ref, cams[0]);
    std::vector<RgbImage> nbr_imgs;
    for (std::size_t k = 0; k < nbrs.size(); ++k) nbr_imgs.push_back(load(nbrs[k], cams[k + 1]));

    const ScaleRecord scale = ChooseScale(scene, ref, cfg.scale_mode);
    const auto scaled = ApplySceneScale(cams, SceneScale{scale.factor, scale.mode});
    const DisparityField d = RunInference(ref_img, nbr_imgs, scaled, weights);
    WritePfm(DisparityPath(out_dir, ref), DisparityToMap(d));
    WriteScaleRecord(ScalePath(out_dir, ref), scale);
  });
  for (const auto& w : warnings) {
    if (!w.empty()) err << "warning: " << w << "\n";
  }
}

void CmdFuse(const PipelineConfig& cfg, const fs::path& lr_dir, const fs::path& hr_dir,
             const fs::path& out_dir) {
  const FusionConfig fusion{cfg.t};
  const std::vector<int> views = ViewsInDirectory(lr_dir);
  fs::create_directories(out_dir);
  ParallelFor(static_cast<int>(views.size()), ResolveThreads(cfg.threads), [&](int i) {
    const int v = views[i];
    const ScaleRecord ls = ReadScaleRecord(ScalePath(lr_dir, v));
    const ScaleRecord hs = ReadScaleRecord(ScalePath(hr_dir, v));
    if (ls.factor != hs.factor) {
      ThrowInvalid("view " + std::to_string(v) + ": LR and HR maps use different scene scales");
    }
    const DisparityField lr = MapToDisparity(ReadPfm(DisparityPath(lr_dir, v)));
    const DisparityField hr = MapToDisparity(ReadPfm(DisparityPath(hr_dir, v)));
    WritePfm(DisparityPath(out_dir, v), DisparityToMap(FuseMultires(lr, hr, fusion)));
    WriteScaleRecord(ScalePath(out_dir, v), ls);
  });
}

void CmdStitch(const PipelineConfig& cfg, const fs::path& scene_dir, const fs::path& depth_dir,
               const fs::path& out_path, std::ostream& out, std::ostream& err) {
  if (cfg.stitch_resolution != "native" && cfg.stitch_resolution != "half") {
    ThrowInvalid("--stitch-resolution must be 'native' or 'half'");
  }
  const double factor = cfg.stitch_resolution == "half" ? 0.5 : 1.0;
  ConsistencyConfig consistency{cfg.t1, cfg.t2, cfg.nmin, cfg.p};
  consistency.Validate();
  const SceneDir scene(scene_dir);
  const std::vector<int> ids = ViewsInDirectory(depth_dir);
  std::map<int, int> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index[ids[i]] = static_cast<int>(i);

  std::vector<StitchView> views(ids.size());
  ParallelFor(static_cast<int>(ids.size()), ResolveThreads(cfg.threads), [&](int i) {
    const int v = ids[i];
    StitchView& sv = views[i];
    const RgbImage full = ReadPpm(scene.ImagePath(v));
    sv.cam = scene.Camera(v, full).Resized(factor);
    sv.image = RgbImage(sv.cam.width, sv.cam.height);
    for (int y = 0; y < sv.cam.height; ++y) {
      for (int x = 0; x < sv.cam.width; ++x) {
        const int sx = std::min(full.width - 1, static_cast<int>(x / factor));
        const int sy = std::min(full.height - 1, static_cast<int>(y / factor));
        std::copy_n(full.pixel(sy, sx), 3, sv.image.pixel(y, x));
      }
    }
    const DisparityField d = ResampleDisparity(MapToDisparity(ReadPfm(DisparityPath(depth_dir, v))),
                                               sv.cam.width, sv.cam.height);
    sv.depth = FloatMap(sv.cam.width, sv.cam.height);
    for (std::size_t p = 0; p < d.values.size(); ++p) {
      const auto z = DisparityToDepth(d.values[p]);
      sv.depth.values[p] = z ? static_cast<float>(*z) : 0.0f;
    }
    sv.scale = ReadScaleRecord(ScalePath(depth_dir, v)).factor;
    const auto it = scene.neighbors.find(v);
    if (it != scene.neighbors.end()) {
      for (const int n : it->second) {
        if (index.count(n)) sv.neighbors.push_back(index.at(n));
      }
    }
  });

  StitchReport report;
  const PointCloud cloud = Stitch(views, consistency, &report);
  WritePly(out_path, cloud);
  for (const auto& w : report.warnings) err << "warning: " << w << "\n";
  out << std::setprecision(6) << "k=" << report.k.k << " pass_fraction=" << report.k.pass_fraction
      << " valid_pixels=" << report.valid_pixels << " points=" << cloud.size() << "\n";
}

void CmdEval(const PipelineConfig& cfg, const fs::path& recon, const fs::path& gt,
             std::ostream& out) {
  if (!(cfg.tau > 0.0)) ThrowInvalid("--tau must be positive");
  const CloudMetrics m = ComputeMetrics(ReadPly(recon), ReadPly(gt), cfg.tau, cfg.max_dist);
  out << m.ToText();
}

void CmdSynth(const PipelineConfig& cfg, const fs::path& spec_path, const fs::path& out_dir) {
  SceneSpec spec = SceneSpec::FromKeyValues(ReadKeyValues(spec_path));
  if (cfg.seed >= 0) spec.seed = static_cast<std::uint64_t>(cfg.seed);
  WriteSceneDirectory(out_dir, GenerateScene(spec));
}

void CmdBench(const PipelineConfig& cfg, std::ostream& out) {
  CERMVS_CHECK(cfg.levels >= 1 && cfg.radius >= 1 && cfg.coarse_samples >= 1 &&
                   cfg.full_range_samples >= 1 && cfg.width > 0 && cfg.height > 0 &&
                   cfg.neighbors >= 1,
               "bench parameters must be positive");
  const int fine = (1 << (cfg.levels - 1)) * cfg.radius;
  const int hf = cfg.height / 4, wf = cfg.width / 4;
  const MemoryEstimate m = EstimateMemory(cfg.coarse_samples, fine, cfg.full_range_samples,
                                          cfg.levels, hf, wf, cfg.neighbors);
  out << "feature grid " << wf << "x" << hf << ", " << cfg.neighbors << " neighbors, L="
      << cfg.levels << "\n";
  out << "stage          samples  elements        bytes\n";
  const std::uint64_t s1 = StackElements(cfg.coarse_samples, cfg.levels, hf, wf, cfg.neighbors);
  const std::uint64_t s2 = StackElements(fine, cfg.levels, hf, wf, cfg.neighbors);
  auto row = [&](const std::string& name, int samples, std::uint64_t elements) {
    out << std::left << std::setw(15) << name << std::right << std::setw(7) << samples
        << std::setw(10) << elements << std::setw(13) << elements * 4 << "\n";
  };
  row("coarse", cfg.coarse_samples, s1);
  row("fine", fine, s2);
  row("cascaded", cfg.coarse_samples + fine, m.cascaded_elements);
  row("non-cascaded", cfg.full_range_samples, m.non_cascaded_elements);
  out << std::setprecision(10) << "ratio " << m.ratio() << "\n";
}

// Copies key=value pairs from a config file into options the user did not
// set on the command line.
void ApplyConfigFile(CLI::App& sub, const std::string& path) {
  if (path.empty()) return;
  const KeyValues kv = ReadKeyValues(path);
  for (const auto& [key, value] : kv) {
    CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (opt == nullptr) ThrowInvalid(path + ": unknown key '" + key + "' for " + sub.get_name());
    if (opt->count() > 0) continue;
    opt->clear();
    opt->add_result(value);
    try {
      opt->run_callback();
    } catch (const CLI::ParseError& e) {
      ThrowInvalid(path + ": bad value for '" + key + "': " + e.what());
    }
  }
}

}  // namespace

int RunCli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  PipelineConfig cfg;
  std::string config_path;
  CLI::App app{"Cascaded epipolar recurrent multiview stereo"};
  app.require_subcommand(1);

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value file with defaults for these flags");
    sub->add_option("--threads", cfg.threads, "worker threads (CERMVS_THREADS overrides)");
  };

  fs::path scene, out_path, lr_dir, hr_dir, depth_dir, recon, gt, spec;

  CLI::App* depth = app.add_subcommand("depth", "per-view disparity maps at feature resolution");
  depth->add_option("scene", scene, "scene directory")->required();
  depth->add_option("--out", out_path, "output directory")->required();
  depth->add_option("--weights", cfg.weights, "checkpoint manifest");
  depth->add_option("--resolution", cfg.resolution, "native or 2x");
  depth->add_option("--views", cfg.views, "neighbor views per reference view");
  depth->add_option("--scale-mode", cfg.scale_mode, "auto, gt-median-600, sparse-min-400, none");
  common(depth);

  CLI::App* fuse = app.add_subcommand("fuse", "multiresolution disparity fusion");
  fuse->add_option("lr", lr_dir, "native-resolution disparity directory")->required();
  fuse->add_option("hr", hr_dir, "2x disparity directory")->required();
  fuse->add_option("--out", out_path, "output directory")->required();
  fuse->add_option("--t", cfg.t, "relative depth agreement threshold");
  common(fuse);

  CLI::App* stitch = app.add_subcommand("stitch", "consistency-filtered point cloud");
  stitch->add_option("scene", scene, "scene directory")->required();
  stitch->add_option("depth", depth_dir, "disparity directory")->required();
  stitch->add_option("--out", out_path, "output PLY")->required();
  stitch->add_option("--p", cfg.p, "target pass percentage");
  stitch->add_option("--t1", cfg.t1, "base reprojection threshold (px)");
  stitch->add_option("--t2", cfg.t2, "base relative depth threshold");
  stitch->add_option("--nmin", cfg.nmin, "minimum consistent neighbors");
  stitch->add_option("--stitch-resolution", cfg.stitch_resolution, "native or half");
  common(stitch);

  CLI::App* eval = app.add_subcommand("eval", "accuracy, completeness and F1 against GT");
  eval->add_option("recon", recon, "reconstructed PLY")->required();
  eval->add_option("gt", gt, "ground-truth PLY")->required();
  eval->add_option("--tau", cfg.tau, "F1 distance threshold (mm)");
  eval->add_option("--max-dist", cfg.max_dist, "distance cap (mm)");
  common(eval);

  CLI::App* synth = app.add_subcommand("synth", "render a synthetic scene directory");
  synth->add_option("spec", spec, "scene spec file")->required();
  synth->add_option("--out", out_path, "output directory")->required();
  synth->add_option("--seed", cfg.seed, "texture seed override");
  common(synth);

  CLI::App* bench = app.add_subcommand("bench", "cost-volume memory table");
  bench->add_option("--coarse-samples", cfg.coarse_samples, "stage-1 samples D");
  bench->add_option("--levels", cfg.levels, "pyramid levels L");
  bench->add_option("--radius", cfg.radius, "lookup window R");
  bench->add_option("--full-range-samples", cfg.full_range_samples,
                    "samples of a single fine volume over the whole range");
  bench->add_option("--width", cfg.width, "image width");
  bench->add_option("--height", cfg.height, "image height");
  bench->add_option("--neighbors", cfg.neighbors, "neighbor views");
  common(bench);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInvalidInput;
  }

  try {
    for (CLI::App* sub : app.get_subcommands()) ApplyConfigFile(*sub, config_path);
    if (*depth) CmdDepth(cfg, scene, out_path, err);
    if (*fuse) CmdFuse(cfg, lr_dir, hr_dir, out_path);
    if (*stitch) CmdStitch(cfg, scene, depth_dir, out_path, out, err);
    if (*eval) CmdEval(cfg, recon, gt, out);
    if (*synth) CmdSynth(cfg, spec, out_path);
    if (*bench) CmdBench(cfg, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::kInvalidInput:
        return kExitInvalidInput;
      case ErrorKind::kNumericalFailure:
        return kExitNumerical;
      case ErrorKind::kIo:
        return kExitIo;
    }
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}

}  // namespace cermvs
