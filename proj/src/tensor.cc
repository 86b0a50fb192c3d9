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

#include "cermvs/tensor.h"

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cermvs/error.h"

namespace cermvs {

static_assert(std::endian::native == std::endian::little,
              "TNSR and PFM I/O assume a little-endian host");

std::size_t ShapeProduct(const Tensor::Shape& shape) {
  std::size_t n = 1;
  for (const auto e : shape) n *= e;
  return n;
}

std::string ShapeToString(const Tensor::Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  CERMVS_CHECK(!shape_.empty(), "tensor rank must be at least 1");
  for (const auto e : shape_) CERMVS_CHECK(e >= 1, "tensor extents must be >= 1");
  data_.assign(ShapeProduct(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  CERMVS_CHECK(!shape_.empty(), "tensor rank must be at least 1");
  for (const auto e : shape_) CERMVS_CHECK(e >= 1, "tensor extents must be >= 1");
  CERMVS_CHECK(data_.size() == ShapeProduct(shape_),
               "tensor data length " + std::to_string(data_.size()) +
                   " does not match shape " + ShapeToString(shape_));
}

void Tensor::Fill(float value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::AllFinite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](float v) { return std::isfinite(v); });
}

namespace {

struct BilinearTaps {
  bool inside = false;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double fx = 0.0, fy = 0.0;
};

BilinearTaps ComputeTaps(const Point2& p, int width, int height) {
  BilinearTaps taps;
  if (!(p.x >= 0.0 && p.y >= 0.0 && p.x <= width - 1 && p.y <= height - 1)) {
    return taps;
  }
  taps.inside = true;
  taps.x0 = static_cast<int>(std::floor(p.x));
  taps.y0 = static_cast<int>(std::floor(p.y));
  taps.x1 = std::min(taps.x0 + 1, width - 1);
  taps.y1 = std::min(taps.y0 + 1, height - 1);
  taps.fx = p.x - taps.x0;
  taps.fy = p.y - taps.y0;
  return taps;
}

void CheckSampleInputs(const Tensor& src, std::span<const Point2> coords) {
  CERMVS_CHECK(src.rank() == 3, "bilinear sampling expects a [C,H,W] source, got " +
                                    ShapeToString(src.shape()));
  for (const auto& p : coords) {
    CERMVS_CHECK(std::isfinite(p.x) && std::isfinite(p.y),
                 "bilinear sampling coordinate is not finite");
  }
}

}  // namespace

Tensor BilinearSample2d(const Tensor& src, std::span<const Point2> coords) {
  CheckSampleInputs(src, coords);
  CERMVS_CHECK(!coords.empty(), "bilinear sampling needs at least one coordinate");
  const auto channels = src.dim(0);
  const int height = static_cast<int>(src.dim(1));
  const int width = static_cast<int>(src.dim(2));
  const auto k = coords.size();
  Tensor out({channels, k}, 0.0f);
  for (std::size_t i = 0; i < k; ++i) {
    const BilinearTaps t = ComputeTaps(coords[i], width, height);
    if (!t.inside) continue;
    const double w00 = (1.0 - t.fx) * (1.0 - t.fy);
    const double w10 = t.fx * (1.0 - t.fy);
    const double w01 = (1.0 - t.fx) * t.fy;
    const double w11 = t.fx * t.fy;
    for (std::size_t c = 0; c < channels; ++c) {
      const double v = w00 * src.at(c, t.y0, t.x0) + w10 * src.at(c, t.y0, t.x1) +
                       w01 * src.at(c, t.y1, t.x0) + w11 * src.at(c, t.y1, t.x1);
      out[c * k + i] = static_cast<float>(v);
    }
  }
  return out;
}

BilinearSampleGradients BilinearSampleGrad(const Tensor& src,
                                           std::span<const Point2> coords,
                                           const Tensor& upstream) {
  CheckSampleInputs(src, coords);
  const auto channels = src.dim(0);
  const auto k = coords.size();
  CERMVS_CHECK(upstream.rank() == 2 && upstream.dim(0) == channels &&
                   upstream.dim(1) == k,
               "upstream gradient shape " + ShapeToString(upstream.shape()) +
                   " does not match sample output [" + std::to_string(channels) +
                   "," + std::to_string(k) + "]");
  const int height = static_cast<int>(src.dim(1));
  const int width = static_cast<int>(src.dim(2));

  BilinearSampleGradients grads{Tensor(src.shape(), 0.0f), std::vector<Point2>(k)};
  for (std::size_t i = 0; i < k; ++i) {
    const BilinearTaps t = ComputeTaps(coords[i], width, height);
    if (!t.inside) continue;
    const double w00 = (1.0 - t.fx) * (1.0 - t.fy);
    const double w10 = t.fx * (1.0 - t.fy);
    const double w01 = (1.0 - t.fx) * t.fy;
    const double w11 = t.fx * t.fy;
    double gx = 0.0;
    double gy = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const double g = upstream[c * k + i];
      const double v00 = src.at(c, t.y0, t.x0);
      const double v10 = src.at(c, t.y0, t.x1);
      const double v01 = src.at(c, t.y1, t.x0);
      const double v11 = src.at(c, t.y1, t.x1);
      // Clamped taps at the last row/column collapse onto the same pixel, so
      // the weights are accumulated rather than assigned.
      grads.d_src.at(c, t.y0, t.x0) += static_cast<float>(g * w00);
      grads.d_src.at(c, t.y0, t.x1) += static_cast<float>(g * w10);
      grads.d_src.at(c, t.y1, t.x0) += static_cast<float>(g * w01);
      grads.d_src.at(c, t.y1, t.x1) += static_cast<float>(g * w11);
      if (t.x1 != t.x0) gx += g * ((1.0 - t.fy) * (v10 - v00) + t.fy * (v11 - v01));
      if (t.y1 != t.y0) gy += g * ((1.0 - t.fx) * (v01 - v00) + t.fx * (v11 - v10));
    }
    grads.d_coords[i] = {gx, gy};
  }
  return grads;
}

Tensor AvgPoolLastAxis(const Tensor& src) {
  CERMVS_CHECK(!src.empty(), "avg pool of an empty tensor");
  const auto last = src.shape().back();
  CERMVS_CHECK(last % 2 == 0, "avg pool needs an even last extent, got " +
                                  std::to_string(last));
  CERMVS_CHECK(last >= 2, "avg pool needs a last extent of at least 2");
  Tensor::Shape shape = src.shape();
  shape.back() = last / 2;
  Tensor out(shape, 0.0f);
  const std::size_t rows = src.size() / last;
  const float* in = src.data();
  float* dst = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = in + r * last;
    float* orow = dst + r * (last / 2);
    for (std::size_t j = 0; j < last / 2; ++j) {
      orow[j] = static_cast<float>(
          (static_cast<double>(row[2 * j]) + static_cast<double>(row[2 * j + 1])) * 0.5);
    }
  }
  return out;
}

Tensor Conv2dForward(const Tensor& input, const Tensor& weights,
                     const Tensor& bias, int stride, int padding) {
  CERMVS_CHECK(input.rank() == 3, "conv2d input must be [Cin,H,W], got " +
                                      ShapeToString(input.shape()));
  CERMVS_CHECK(weights.rank() == 4, "conv2d weights must be [Cout,Cin,kh,kw], got " +
                                        ShapeToString(weights.shape()));
  CERMVS_CHECK(stride >= 1 && padding >= 0, "conv2d stride/padding out of range");
  const int cin = static_cast<int>(input.dim(0));
  const int height = static_cast<int>(input.dim(1));
  const int width = static_cast<int>(input.dim(2));
  const int cout = static_cast<int>(weights.dim(0));
  const int kh = static_cast<int>(weights.dim(2));
  const int kw = static_cast<int>(weights.dim(3));
  CERMVS_CHECK(static_cast<int>(weights.dim(1)) == cin,
               "conv2d channel mismatch: input has " + std::to_string(cin) +
                   " channels, weights expect " + std::to_string(weights.dim(1)));
  CERMVS_CHECK(kh % 2 == 1 && kw % 2 == 1, "conv2d kernel extents must be odd");
  CERMVS_CHECK(bias.size() == static_cast<std::size_t>(cout),
               "conv2d bias length does not match output channels");
  const int out_h = (height + 2 * padding - kh) / stride + 1;
  const int out_w = (width + 2 * padding - kw) / stride + 1;
  CERMVS_CHECK(height + 2 * padding >= kh && width + 2 * padding >= kw && out_h >= 1 &&
                   out_w >= 1,
               "conv2d output would be empty");

  using MatrixRowD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const int patch = cin * kh * kw;
  // Weights as [patch x Cout] so that cols^T * w lands in channel-major output.
  MatrixRowD w_t(patch, cout);
  for (int co = 0; co < cout; ++co) {
    const float* wrow = weights.data() + static_cast<std::size_t>(co) * patch;
    for (int k = 0; k < patch; ++k) w_t(k, co) = wrow[k];
  }

  Tensor out({static_cast<std::size_t>(cout), static_cast<std::size_t>(out_h),
              static_cast<std::size_t>(out_w)},
             0.0f);
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;

  // Bound the im2col buffer to about 4M doubles per chunk of output rows.
  constexpr std::size_t kChunkElems = std::size_t{1} << 22;
  const int rows_per_chunk = std::max<int>(
      1, static_cast<int>(kChunkElems / (static_cast<std::size_t>(patch) * out_w)));

  Eigen::MatrixXd cols;
  Eigen::MatrixXd result;
  for (int r0 = 0; r0 < out_h; r0 += rows_per_chunk) {
    const int r1 = std::min(out_h, r0 + rows_per_chunk);
    const int npix = (r1 - r0) * out_w;
    cols.resize(patch, npix);
    for (int oy = r0; oy < r1; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        double* col = cols.data() + static_cast<std::size_t>((oy - r0) * out_w + ox) * patch;
        int k = 0;
        for (int ci = 0; ci < cin; ++ci) {
          const float* chan = input.channel(ci);
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride - padding + ky;
            const bool row_ok = iy >= 0 && iy < height;
            for (int kx = 0; kx < kw; ++kx, ++k) {
              const int ix = ox * stride - padding + kx;
              col[k] = (row_ok && ix >= 0 && ix < width)
                           ? static_cast<double>(chan[static_cast<std::size_t>(iy) * width + ix])
                           : 0.0;
            }
          }
        }
      }
    }
    result.noalias() = cols.transpose() * w_t;
    for (int co = 0; co < cout; ++co) {
      const double b = bias[co];
      float* dst = out.data() + co * plane + static_cast<std::size_t>(r0) * out_w;
      const double* src = result.data() + static_cast<std::size_t>(co) * npix;
      for (int p = 0; p < npix; ++p) dst[p] = static_cast<float>(src[p] + b);
    }
  }
  return out;
}

namespace {

constexpr char kTensorMagic[4] = {'T', 'N', 'S', 'R'};
constexpr std::uint32_t kTensorVersion = 1;

}  // namespace

void WriteTensor(const std::filesystem::path& path, const Tensor& tensor) {
  std::ofstream file(path, std::ios::binary);
  if (!file) ThrowIo("cannot open tensor file for writing: " + path.string());
  file.write(kTensorMagic, 4);
  const std::uint32_t version = kTensorVersion;
  const auto rank = static_cast<std::uint32_t>(tensor.rank());
  file.write(reinterpret_cast<const char*>(&version), sizeof(version));
  file.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
  for (const auto e : tensor.shape()) {
    const auto extent = static_cast<std::uint64_t>(e);
    file.write(reinterpret_cast<const char*>(&extent), sizeof(extent));
  }
  file.write(reinterpret_cast<const char*>(tensor.data()),
             static_cast<std::streamsize>(tensor.size() * sizeof(float)));
  if (!file) ThrowIo("failed writing tensor file: " + path.string());
}

Tensor ReadTensor(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) ThrowIo("cannot open tensor file: " + path.string());
  char magic[4] = {};
  std::uint32_t version = 0;
  std::uint32_t rank = 0;
  file.read(magic, 4);
  file.read(reinterpret_cast<char*>(&version), sizeof(version));
  file.read(reinterpret_cast<char*>(&rank), sizeof(rank));
  if (!file || std::memcmp(magic, kTensorMagic, 4) != 0) {
    ThrowIo("not a TNSR file: " + path.string());
  }
  if (version != kTensorVersion) {
    ThrowIo("unsupported TNSR version " + std::to_string(version) + ": " + path.string());
  }
  if (rank == 0 || rank > 8) ThrowIo("bad TNSR rank in " + path.string());
  Tensor::Shape shape(rank);
  for (auto& e : shape) {
    std::uint64_t extent = 0;
    file.read(reinterpret_cast<char*>(&extent), sizeof(extent));
    if (!file || extent == 0) ThrowIo("bad TNSR extent in " + path.string());
    e = static_cast<std::size_t>(extent);
  }
  std::vector<float> values(ShapeProduct(shape));
  file.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!file) ThrowIo("truncated TNSR payload in " + path.string());
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace cermvs
