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

#include "cermvs/loss.h"

#include <cmath>

#include "cermvs/error.h"

namespace cermvs {

void LossConfig::Validate() const {
  CERMVS_CHECK(gamma > 0.0 && gamma <= 1.0, "loss gamma must be in (0, 1]");
  CERMVS_CHECK(kappa > 0.0, "loss kappa must be positive");
  CERMVS_CHECK(lambda > 0.0, "loss lambda must be positive");
  CERMVS_CHECK(w >= 0.0 && w <= 1.0, "loss mix w must be in [0, 1]");
}

LossResult ComputeLoss(std::span<const DisparityField> preds, const DisparityField& gt,
                       const LossConfig& cfg) {
  cfg.Validate();
  CERMVS_CHECK(!preds.empty(), "loss needs at least one prediction");
  CERMVS_CHECK(cfg.valid.empty() || cfg.valid.size() == gt.size(),
               "valid mask does not match the GT grid");
  std::vector<std::size_t> pixels;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool marked = cfg.valid.empty() || cfg.valid[i] != 0;
    if (marked && gt.values[i] > 0.0f) pixels.push_back(i);
  }
  CERMVS_CHECK(!pixels.empty(), "loss valid mask is empty");
  const double inv_n = 1.0 / static_cast<double>(pixels.size());
  const int steps = static_cast<int>(preds.size());

  LossResult out;
  for (int t = 0; t < steps; ++t) {
    const DisparityField& pred = preds[t];
    CERMVS_CHECK(pred.SameGrid(gt), "prediction grid does not match GT");
    const double weight = std::pow(cfg.gamma, steps - 1 - t);
    DisparityField grad(gt.width, gt.height, 0.0f);
    double sum1 = 0.0, sum2 = 0.0;
    for (const std::size_t i : pixels) {
      const double g = gt.values[i];
      const double d = pred.values[i];
      sum1 += std::abs(g - d);
      double g1 = 0.0;
      if (d > g) g1 = 1.0;
      if (d < g) g1 = -1.0;

      double g2 = 0.0;
      if (d <= kMinLossDisparity) {
        sum2 += cfg.kappa;
      } else {
        const double diff = 1.0 / g - 1.0 / d;
        const double err = std::abs(diff);
        if (err >= cfg.kappa) {
          sum2 += cfg.kappa;
        } else {
          sum2 += err;
          // d|1/g - 1/d|/dd = sign(diff) / d^2
          if (diff != 0.0) g2 = (diff > 0 ? 1.0 : -1.0) / (d * d);
        }
      }
      grad.values[i] = static_cast<float>(
          weight * inv_n * ((1.0 - cfg.w) * g1 + cfg.w * cfg.lambda * g2));
    }
    out.l1 += weight * sum1 * inv_n;
    out.l2 += weight * sum2 * inv_n;
    out.grads.push_back(std::move(grad));
  }
  out.total = (1.0 - cfg.w) * out.l1 + cfg.w * cfg.lambda * out.l2;
  return out;
}

double WSchedule(double epoch, double total_epochs) {
  CERMVS_CHECK(total_epochs > 0.0, "w schedule needs a positive epoch count");
  CERMVS_CHECK(epoch >= 0.0 && epoch <= total_epochs, "epoch outside [0, total]");
  return epoch / total_epochs;
}

}  // namespace cermvs
