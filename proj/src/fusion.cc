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

#include "cermvs/fusion.h"

#include <algorithm>
#include <cmath>

#include "cermvs/error.h"

namespace cermvs {

DisparityField ResampleDisparity(const DisparityField& d, int width, int height) {
  CERMVS_CHECK(d.width >= 1 && d.height >= 1 && width >= 1 && height >= 1,
               "resampling needs non-empty grids");
  const double sx = static_cast<double>(d.width) / width;
  const double sy = static_cast<double>(d.height) / height;
  DisparityField out(width, height);
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, d.height - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, d.height - 1);
    const double ay = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, d.width - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, d.width - 1);
      const double ax = fx - x0;
      const double top = (1 - ax) * d.at(y0, x0) + ax * d.at(y0, x1);
      const double bottom = (1 - ax) * d.at(y1, x0) + ax * d.at(y1, x1);
      out.at(y, x) = static_cast<float>((1 - ay) * top + ay * bottom);
    }
  }
  return out;
}

DisparityField UpsampleDisparity(const DisparityField& d, int factor) {
  CERMVS_CHECK(factor >= 1, "upsampling factor must be positive");
  return ResampleDisparity(d, d.width * factor, d.height * factor);
}

DisparityField FuseMultires(const DisparityField& lr, const DisparityField& hr,
                            const FusionConfig& cfg) {
  CERMVS_CHECK(cfg.t >= 0.0, "fusion threshold must be >= 0");
  CERMVS_CHECK(hr.width == 2 * lr.width && hr.height == 2 * lr.height,
               "HR disparity grid must be exactly twice the LR grid");
  const DisparityField up = UpsampleDisparity(lr, 2);
  DisparityField out(hr.width, hr.height);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double dl = up.values[i];
    const double dh = hr.values[i];
    if (!(dl > cfg.epsilon)) {
      out.values[i] = 0.0f;
      continue;
    }
    if (!(dh > cfg.epsilon)) {
      out.values[i] = up.values[i];
      continue;
    }
    const double zl = 1.0 / dl;
    const double gap = std::abs(zl - 1.0 / dh);
    out.values[i] = gap < cfg.t * zl ? hr.values[i] : up.values[i];
  }
  return out;
}

}  // namespace cermvs
