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

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace cermvs {

// Single-channel float raster (depth maps, disparity maps).
struct FloatMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;

  FloatMap() = default;
  FloatMap(int w, int h, float fill = 0.0f)
      : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

  float& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const FloatMap&, const FloatMap&) = default;
};

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // interleaved, row-major

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* pixel(int y, int x) { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* pixel(int y, int x) const {
    return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

struct ColoredPoint {
  float x = 0, y = 0, z = 0;
  std::uint8_t r = 0, g = 0, b = 0;

  friend bool operator==(const ColoredPoint&, const ColoredPoint&) = default;
};

using PointCloud = std::vector<ColoredPoint>;

// Bilinear upsampling by an integer factor with pixel centers aligned
// (src = (dst + 0.5) / factor - 0.5, clamped at the borders).
RgbImage UpsampleImage(const RgbImage& image, int factor);

// PFM "Pf": little-endian (negative scale), rows stored bottom-up.
FloatMap ReadPfm(const std::filesystem::path& path);
void WritePfm(const std::filesystem::path& path, const FloatMap& map);

// Binary PPM (P6), maxval 255.
RgbImage ReadPpm(const std::filesystem::path& path);
void WritePpm(const std::filesystem::path& path, const RgbImage& image);

// Binary little-endian PLY with float x,y,z and uchar red,green,blue.
void WritePly(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud ReadPly(const std::filesystem::path& path);

// "view_id: id1 id2 ..." per line.
using NeighborLists = std::map<int, std::vector<int>>;
NeighborLists ReadNeighborLists(const std::filesystem::path& path);
void WriteNeighborLists(const std::filesystem::path& path, const NeighborLists& lists);

// Flat key=value text. '#' starts a comment. Repeated keys keep every value in
// file order.
using KeyValues = std::multimap<std::string, std::string>;
KeyValues ReadKeyValues(const std::filesystem::path& path);
KeyValues ParseKeyValues(const std::string& text, const std::string& origin);

// Zero-padded 8-digit view file stem, e.g. 00000003.
std::string ViewStem(int view);

}  // namespace cermvs
