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

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "cermvs/error.h"

namespace cermvs {

namespace {

// [C,H,W] -> pixel-major [H*W*C] so bilinear taps read contiguous vectors.
std::vector<float> ToPixelMajor(const Tensor& feat) {
  const std::size_t c = feat.dim(0);
  const std::size_t hw = feat.dim(1) * feat.dim(2);
  std::vector<float> out(c * hw);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* src = feat.channel(ch);
    for (std::size_t p = 0; p < hw; ++p) out[p * c + ch] = src[p];
  }
  return out;
}

double Dot(const float* a, const float* b, int n) {
  using Vec = Eigen::Map<const Eigen::VectorXf>;
  return Vec(a, n).cast<double>().dot(Vec(b, n).cast<double>());
}

void CheckFeatureInputs(const Tensor& ref_feat, std::span<const Tensor> nbr_feats,
                        std::span<const CameraModel> cams, int downsize) {
  CERMVS_CHECK(ref_feat.rank() == 3, "reference features must be [Df,Hf,Wf]");
  CERMVS_CHECK(!nbr_feats.empty(), "cost volume needs at least one neighbor");
  CERMVS_CHECK(cams.size() == nbr_feats.size() + 1,
               "camera count " + std::to_string(cams.size()) + " does not equal N+1 = " +
                   std::to_string(nbr_feats.size() + 1));
  CERMVS_CHECK(downsize >= 1, "downsize must be positive");
  for (const auto& f : nbr_feats) {
    CERMVS_CHECK(f.shape() == ref_feat.shape(),
                 "neighbor feature shape " + ShapeToString(f.shape()) +
                     " differs from reference " + ShapeToString(ref_feat.shape()));
  }
}

using SampleFn = std::function<double(int y, int x, int j)>;

// Level-0 correlation volume [N,Hf,Wf,D] for an arbitrary per-pixel sampling.
Tensor CorrelationVolume(const Tensor& ref_feat, std::span<const Tensor> nbr_feats,
                         std::span<const CameraModel> cams, int downsize, int samples,
                         const SampleFn& disparity_of) {
  const int channels = static_cast<int>(ref_feat.dim(0));
  const int height = static_cast<int>(ref_feat.dim(1));
  const int width = static_cast<int>(ref_feat.dim(2));
  const int num_nbrs = static_cast<int>(nbr_feats.size());
  const double norm = 1.0 / std::sqrt(static_cast<double>(channels));

  Tensor volume({static_cast<std::size_t>(num_nbrs), static_cast<std::size_t>(height),
                 static_cast<std::size_t>(width), static_cast<std::size_t>(samples)},
                0.0f);
  const std::vector<float> ref_pm = ToPixelMajor(ref_feat);

  for (int n = 0; n < num_nbrs; ++n) {
    const std::vector<float> nbr_pm = ToPixelMajor(nbr_feats[n]);
    const EpipolarPair pair(cams[0], cams[n + 1]);
    auto tap = [&](int ty, int tx) {
      return nbr_pm.data() + (static_cast<std::size_t>(ty) * width + tx) * channels;
    };
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const float* f = ref_pm.data() + (static_cast<std::size_t>(y) * width + x) * channels;
        const EpipolarRay ray = pair.Ray({static_cast<double>(x), static_cast<double>(y)},
                                         downsize);
        float* out = volume.data() +
                     ((static_cast<std::size_t>(n) * height + y) * width + x) * samples;
        for (int j = 0; j < samples; ++j) {
          const auto coord = ray.FeatureCoord(disparity_of(y, x, j));
          if (!coord) continue;
          const double px = coord->x;
          const double py = coord->y;
          if (!(px >= 0.0 && py >= 0.0 && px <= width - 1 && py <= height - 1)) continue;
          const int x0 = static_cast<int>(std::floor(px));
          const int y0 = static_cast<int>(std::floor(py));
          const int x1 = std::min(x0 + 1, width - 1);
          const int y1 = std::min(y0 + 1, height - 1);
          const double fx = px - x0;
          const double fy = py - y0;
          double c = (1.0 - fx) * (1.0 - fy) * Dot(f, tap(y0, x0), channels);
          if (fx > 0.0) c += fx * (1.0 - fy) * Dot(f, tap(y0, x1), channels);
          if (fy > 0.0) c += (1.0 - fx) * fy * Dot(f, tap(y1, x0), channels);
          if (fx > 0.0 && fy > 0.0) c += fx * fy * Dot(f, tap(y1, x1), channels);
          out[j] = static_cast<float>(c * norm);
        }
      }
    }
  }
  return volume;
}

}  // namespace

double Stage1Disparity(const Stage1Params& params, int j) {
  return j * (params.max_disparity / params.num_samples);
}

std::vector<Tensor> PoolVolume(Tensor level0, int num_levels) {
  CERMVS_CHECK(num_levels >= 1, "cost volume needs at least one level");
  const auto samples = level0.shape().back();
  CERMVS_CHECK(samples % (std::size_t{1} << (num_levels - 1)) == 0,
               "disparity sample count " + std::to_string(samples) +
                   " is not divisible by 2^(L-1)");
  std::vector<Tensor> levels;
  levels.reserve(num_levels);
  levels.push_back(std::move(level0));
  for (int l = 1; l < num_levels; ++l) levels.push_back(AvgPoolLastAxis(levels.back()));
  return levels;
}

CostVolumeStack BuildStage1Volume(const Tensor& ref_feat, std::span<const Tensor> nbr_feats,
                                  std::span<const CameraModel> cams,
                                  const Stage1Params& params) {
  CheckFeatureInputs(ref_feat, nbr_feats, cams, params.downsize);
  CERMVS_CHECK(params.num_samples >= 1 && params.max_disparity > 0.0,
               "stage-1 sampling needs D >= 1 and d_max > 0");
  CERMVS_CHECK(params.num_samples % (1 << (params.num_levels - 1)) == 0,
               "D must be divisible by 2^(L-1)");
  const double increment = params.max_disparity / params.num_samples;
  Tensor level0 = CorrelationVolume(ref_feat, nbr_feats, cams, params.downsize,
                                    params.num_samples,
                                    [increment](int, int, int j) { return j * increment; });
  CostVolumeStack stack;
  stack.levels = PoolVolume(std::move(level0), params.num_levels);
  stack.base_increment = increment;
  return stack;
}

CostVolumeStack BuildStage2Volume(const Tensor& ref_feat, std::span<const Tensor> nbr_feats,
                                  std::span<const CameraModel> cams,
                                  const DisparityField& centers, const Stage2Params& params) {
  CheckFeatureInputs(ref_feat, nbr_feats, cams, params.downsize);
  CERMVS_CHECK(params.fine_increment > 0.0, "fine increment must be positive");
  CERMVS_CHECK(params.radius >= 1 && params.num_levels >= 1,
               "stage-2 needs R >= 1 and L >= 1");
  CERMVS_CHECK(centers.width == static_cast<int>(ref_feat.dim(2)) &&
                   centers.height == static_cast<int>(ref_feat.dim(1)),
               "stage-2 centers grid does not match the feature grid");
  centers.Validate();
  const int samples = params.num_samples();
  const double half = samples / 2;
  const double inc = params.fine_increment;
  Tensor level0 = CorrelationVolume(
      ref_feat, nbr_feats, cams, params.downsize, samples, [&](int y, int x, int j) {
        return std::max(0.0, static_cast<double>(centers.at(y, x)) + (j - half) * inc);
      });
  CostVolumeStack stack;
  stack.levels = PoolVolume(std::move(level0), params.num_levels);
  stack.base_increment = inc;
  stack.centers = centers;
  return stack;
}

Tensor LookupVolume(const CostVolumeStack& stack, const DisparityField& disparity,
                    int radius) {
  CERMVS_CHECK(!stack.levels.empty(), "lookup on an empty cost volume");
  CERMVS_CHECK(radius >= 1 && radius % 2 == 1, "lookup window length must be odd");
  const int height = stack.height();
  const int width = stack.width();
  CERMVS_CHECK(disparity.width == width && disparity.height == height,
               "lookup disparity grid " + std::to_string(disparity.width) + "x" +
                   std::to_string(disparity.height) + " does not match volume grid " +
                   std::to_string(width) + "x" + std::to_string(height));
  const int num_nbrs = stack.num_neighbors();
  const int num_levels = stack.num_levels();
  const int half = (radius - 1) / 2;
  const std::size_t plane = static_cast<std::size_t>(height) * width;

  Tensor out({static_cast<std::size_t>(num_nbrs),
              static_cast<std::size_t>(radius * num_levels),
              static_cast<std::size_t>(height), static_cast<std::size_t>(width)},
             0.0f);
  for (int l = 0; l < num_levels; ++l) {
    const Tensor& level = stack.levels[l];
    const int samples = static_cast<int>(level.dim(3));
    const double step = stack.base_increment * static_cast<double>(1 << l);
    for (int n = 0; n < num_nbrs; ++n) {
      for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
          const double d = disparity.at(y, x);
          double b = d / step;
          if (stack.centers) b = (d - stack.centers->at(y, x)) / step + 0.5 * samples;
          const float* row =
              level.data() + ((static_cast<std::size_t>(n) * height + y) * width + x) * samples;
          const std::size_t pix = static_cast<std::size_t>(y) * width + x;
          for (int i = 0; i < radius; ++i) {
            const double pos = b + (i - half);
            if (!(pos >= 0.0 && pos <= samples - 1)) continue;
            const int i0 = static_cast<int>(std::floor(pos));
            const int i1 = std::min(i0 + 1, samples - 1);
            const double f = pos - i0;
            const double v = (1.0 - f) * row[i0] + (f > 0.0 ? f * row[i1] : 0.0);
            const std::size_t channel = static_cast<std::size_t>(n) * radius * num_levels +
                                        static_cast<std::size_t>(l) * radius + i;
            out[channel * plane + pix] = static_cast<float>(v);
          }
        }
      }
    }
  }
  return out;
}

Tensor FuseViews(const Tensor& per_neighbor) {
  CERMVS_CHECK(per_neighbor.rank() == 4, "view fusion expects [N,C,H,W], got " +
                                             ShapeToString(per_neighbor.shape()));
  const std::size_t num_nbrs = per_neighbor.dim(0);
  CERMVS_CHECK(num_nbrs >= 1, "view fusion needs at least one neighbor");
  const std::size_t stride = per_neighbor.size() / num_nbrs;
  Tensor out({per_neighbor.dim(1), per_neighbor.dim(2), per_neighbor.dim(3)}, 0.0f);
  std::vector<float> vals(num_nbrs);
  for (std::size_t i = 0; i < stride; ++i) {
    for (std::size_t n = 0; n < num_nbrs; ++n) vals[n] = per_neighbor[n * stride + i];
    // Summing in sorted order makes the result independent of neighbor order.
    std::sort(vals.begin(), vals.end());
    double sum = 0.0;
    for (const float v : vals) sum += v;
    out[i] = static_cast<float>(sum / static_cast<double>(num_nbrs));
  }
  return out;
}

std::uint64_t StackElements(int samples, int num_levels, int height, int width,
                            int num_neighbors) {
  std::uint64_t per_pixel = 0;
  for (int l = 0; l < num_levels; ++l) per_pixel += static_cast<std::uint64_t>(samples >> l);
  return per_pixel * static_cast<std::uint64_t>(height) * static_cast<std::uint64_t>(width) *
         static_cast<std::uint64_t>(num_neighbors);
}

MemoryEstimate EstimateMemory(int coarse_samples, int fine_samples, int full_range_samples,
                              int num_levels, int height, int width, int num_neighbors) {
  CERMVS_CHECK(coarse_samples > 0 && fine_samples > 0 && full_range_samples > 0 &&
                   num_levels > 0 && height > 0 && width > 0 && num_neighbors > 0,
               "memory estimate inputs must be positive");
  const int divisor = 1 << (num_levels - 1);
  CERMVS_CHECK(coarse_samples % divisor == 0 && fine_samples % divisor == 0 &&
                   full_range_samples % divisor == 0,
               "sample counts must be divisible by 2^(L-1)");
  MemoryEstimate est;
  est.cascaded_elements =
      StackElements(coarse_samples, num_levels, height, width, num_neighbors) +
      StackElements(fine_samples, num_levels, height, width, num_neighbors);
  est.non_cascaded_elements =
      StackElements(full_range_samples, num_levels, height, width, num_neighbors);
  return est;
}

void DumpCostVolume(const std::filesystem::path& dir, const CostVolumeStack& stack) {
  std::filesystem::create_directories(dir);
  for (int l = 0; l < stack.num_levels(); ++l) {
    const Tensor& level = stack.levels[l];
    const std::size_t per_nbr = level.size() / level.dim(0);
    for (int n = 0; n < stack.num_neighbors(); ++n) {
      std::vector<float> slice(level.data() + n * per_nbr, level.data() + (n + 1) * per_nbr);
      WriteTensor(dir / ("level" + std::to_string(l) + "_nbr" + std::to_string(n) + ".tnsr"),
                  Tensor({level.dim(1), level.dim(2), level.dim(3)}, std::move(slice)));
    }
  }
}

CostVolumeStack LoadCostVolume(const std::filesystem::path& dir, int num_levels,
                               int num_neighbors, double base_increment) {
  CostVolumeStack stack;
  stack.base_increment = base_increment;
  for (int l = 0; l < num_levels; ++l) {
    std::vector<float> values;
    Tensor::Shape shape;
    for (int n = 0; n < num_neighbors; ++n) {
      const Tensor slice = ReadTensor(
          dir / ("level" + std::to_string(l) + "_nbr" + std::to_string(n) + ".tnsr"));
      if (slice.rank() != 3) ThrowIo("cost volume slice must be rank 3");
      if (n == 0) shape = slice.shape();
      if (slice.shape() != shape) ThrowIo("cost volume slices disagree in shape");
      values.insert(values.end(), slice.values().begin(), slice.values().end());
    }
    stack.levels.emplace_back(
        Tensor::Shape{static_cast<std::size_t>(num_neighbors), shape[0], shape[1], shape[2]},
        std::move(values));
  }
  return stack;
}

}  // namespace cermvs
