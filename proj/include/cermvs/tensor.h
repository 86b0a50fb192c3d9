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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cermvs {

// Dense row-major float array, innermost axis last.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // Rank-3 accessors, the common case for [C,H,W] feature maps.
  float& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  float& at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
    return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }
  float at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
    return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }

  // Pointer to channel c of a [C,H,W] tensor.
  float* channel(std::size_t c) { return data_.data() + c * shape_[1] * shape_[2]; }
  const float* channel(std::size_t c) const {
    return data_.data() + c * shape_[1] * shape_[2];
  }

  void Fill(float value);
  bool AllFinite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<float> data_;
};

std::size_t ShapeProduct(const Tensor::Shape& shape);
std::string ShapeToString(const Tensor::Shape& shape);

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

// Samples a [C,H,W] tensor at K sub-pixel locations, returning [C,K].
// Locations outside [0,W-1]x[0,H-1] produce a zero column.
Tensor BilinearSample2d(const Tensor& src, std::span<const Point2> coords);

struct BilinearSampleGradients {
  Tensor d_src;                  // same shape as src
  std::vector<Point2> d_coords;  // one (d/dx, d/dy) per coordinate
};

// Vector-Jacobian product of BilinearSample2d for an upstream [C,K] gradient.
BilinearSampleGradients BilinearSampleGrad(const Tensor& src,
                                           std::span<const Point2> coords,
                                           const Tensor& upstream);

// Halves the last axis by averaging adjacent pairs.
Tensor AvgPoolLastAxis(const Tensor& src);

// Cross-correlation of a [Cin,H,W] input with [Cout,Cin,kh,kw] weights,
// zero padded. Accumulates in double.
Tensor Conv2dForward(const Tensor& input, const Tensor& weights,
                     const Tensor& bias, int stride, int padding);

// "TNSR" binary container: magic, u32 version, u32 rank, rank x u64 extents,
// then little-endian f32 payload.
void WriteTensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor ReadTensor(const std::filesystem::path& path);

}  // namespace cermvs
