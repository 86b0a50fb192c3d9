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

#include "cermvs/geometry.h"

namespace cermvs {

struct FusionConfig {
  double t = 0.02;         // relative depth threshold
  double epsilon = 1e-6;   // disparities at or below this are invalid (1/mm)
};

// Bilinear resampling of a disparity field onto a grid `factor` times larger,
// aligned at cell centers (a_src = (a_dst + 0.5) / factor - 0.5) and clamped
// at the borders.
DisparityField UpsampleDisparity(const DisparityField& d, int factor);

// Resamples onto an arbitrary target grid under the same center alignment.
DisparityField ResampleDisparity(const DisparityField& d, int width, int height);

// Per pixel: HR where its depth agrees with the upsampled LR depth within
// t * LR depth, otherwise LR. Pixels where either input is invalid take LR;
// both invalid gives 0.
DisparityField FuseMultires(const DisparityField& lr, const DisparityField& hr,
                            const FusionConfig& cfg);

}  // namespace cermvs
