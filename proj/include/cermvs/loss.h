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

#include <span>
#include <vector>

#include "cermvs/geometry.h"

namespace cermvs {

struct LossConfig {
  double gamma = 0.9;
  double kappa = 100.0;  // mm
  double lambda = 2.8e-6;
  double w = 0.0;  // 0: disparity L1 only, 1: depth term only
  // Per-pixel GT availability; empty means every pixel with gt > 0.
  std::vector<std::uint8_t> valid;

  void Validate() const;
};

struct LossResult {
  double total = 0.0;
  double l1 = 0.0;  // disparity term
  double l2 = 0.0;  // capped depth term, before lambda
  std::vector<DisparityField> grads;  // d total / d pred_t
};

// Predictions below this disparity are excluded from the depth term.
inline constexpr double kMinLossDisparity = 1e-6;

// Weighted sum over iterations t = 1..T with weight gamma^(T - t) of the
// per-pixel mean errors over the valid mask:
//   total = (1 - w) * L1 + w * lambda * L2.
LossResult ComputeLoss(std::span<const DisparityField> preds, const DisparityField& gt,
                       const LossConfig& cfg);

// Linear ramp of the depth-term mix over training.
double WSchedule(double epoch, double total_epochs);

}  // namespace cermvs
