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

#include "cermvs/io.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cermvs/error.h"

namespace cermvs {

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string HeaderToken(std::istream& in) {
  std::string token;
  while (in >> token) {
    if (token[0] != '#') return token;
    std::string rest;
    std::getline(in, rest);
  }
  return {};
}

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

FloatMap ReadPfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) ThrowIo("cannot open PFM: " + path.string());
  std::string magic;
  int width = 0, height = 0;
  double scale = 0.0;
  in >> magic >> width >> height >> scale;
  if (!in || magic != "Pf") ThrowIo("not a grayscale PFM (Pf): " + path.string());
  if (width <= 0 || height <= 0) ThrowIo("bad PFM extents in " + path.string());
  if (scale >= 0.0) ThrowIo("big-endian PFM is not supported: " + path.string());
  in.get();  // single whitespace after the scale
  FloatMap map(width, height);
  std::vector<float> row(width);
  for (int y = height - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!in) ThrowIo("truncated PFM payload: " + path.string());
    std::memcpy(&map.at(y, 0), row.data(), row.size() * sizeof(float));
  }
  return map;
}

void WritePfm(const std::filesystem::path& path, const FloatMap& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) ThrowIo("cannot write PFM: " + path.string());
  out << "Pf\n" << map.width << " " << map.height << "\n-1\n";
  for (int y = map.height - 1; y >= 0; --y) {
    out.write(reinterpret_cast<const char*>(map.values.data() + static_cast<std::size_t>(y) * map.width),
              static_cast<std::streamsize>(map.width * sizeof(float)));
  }
  if (!out) ThrowIo("failed writing PFM: " + path.string());
}

RgbImage ReadPpm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) ThrowIo("cannot open PPM: " + path.string());
  if (HeaderToken(in) != "P6") ThrowIo("not a binary PPM (P6): " + path.string());
  const int width = std::stoi(HeaderToken(in));
  const int height = std::stoi(HeaderToken(in));
  const int maxval = std::stoi(HeaderToken(in));
  if (width <= 0 || height <= 0 || maxval != 255) {
    ThrowIo("unsupported PPM header in " + path.string());
  }
  in.get();
  RgbImage image(width, height);
  in.read(reinterpret_cast<char*>(image.rgb.data()),
          static_cast<std::streamsize>(image.rgb.size()));
  if (!in) ThrowIo("truncated PPM payload: " + path.string());
  return image;
}

void WritePpm(const std::filesystem::path& path, const RgbImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) ThrowIo("cannot write PPM: " + path.string());
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()),
            static_cast<std::streamsize>(image.rgb.size()));
  if (!out) ThrowIo("failed writing PPM: " + path.string());
}

void WritePly(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) ThrowIo("cannot write PLY: " + path.string());
  out << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << cloud.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "end_header\n";
  for (const auto& p : cloud) {
    const float xyz[3] = {p.x, p.y, p.z};
    const std::uint8_t rgb[3] = {p.r, p.g, p.b};
    out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
    out.write(reinterpret_cast<const char*>(rgb), sizeof(rgb));
  }
  if (!out) ThrowIo("failed writing PLY: " + path.string());
}

PointCloud ReadPly(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) ThrowIo("cannot open PLY: " + path.string());
  std::string line;
  std::getline(in, line);
  if (Trim(line) != "ply") ThrowIo("not a PLY file: " + path.string());
  std::size_t count = 0;
  std::vector<std::string> properties;
  bool binary_le = false;
  while (std::getline(in, line)) {
    line = Trim(line);
    if (line == "end_header") break;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      binary_le = fmt == "binary_little_endian";
    } else if (word == "element") {
      std::string name;
      ls >> name >> count;
      if (name != "vertex") ThrowIo("PLY element '" + name + "' unsupported: " + path.string());
    } else if (word == "property") {
      std::string type, name;
      ls >> type >> name;
      properties.push_back(type + " " + name);
    }
  }
  const std::vector<std::string> expected = {"float x",       "float y",         "float z",
                                             "uchar red",     "uchar green",     "uchar blue"};
  if (!binary_le || properties != expected) {
    ThrowIo("PLY layout must be binary little-endian float xyz + uchar rgb: " + path.string());
  }
  PointCloud cloud(count);
  for (auto& p : cloud) {
    float xyz[3];
    std::uint8_t rgb[3];
    in.read(reinterpret_cast<char*>(xyz), sizeof(xyz));
    in.read(reinterpret_cast<char*>(rgb), sizeof(rgb));
    if (!in) ThrowIo("truncated PLY payload: " + path.string());
    p = {xyz[0], xyz[1], xyz[2], rgb[0], rgb[1], rgb[2]};
  }
  return cloud;
}

NeighborLists ReadNeighborLists(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) ThrowIo("cannot open neighbor list: " + path.string());
  NeighborLists lists;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = Trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) {
      ThrowIo(path.string() + ":" + std::to_string(lineno) + ": expected 'view_id: ids'");
    }
    std::vector<int> ids;
    std::istringstream rest(line.substr(colon + 1));
    int id = 0;
    while (rest >> id) ids.push_back(id);
    if (!rest.eof()) ThrowIo(path.string() + ":" + std::to_string(lineno) + ": bad view id");
    lists[std::stoi(line.substr(0, colon))] = std::move(ids);
  }
  return lists;
}

void WriteNeighborLists(const std::filesystem::path& path, const NeighborLists& lists) {
  std::ofstream out(path);
  if (!out) ThrowIo("cannot write neighbor list: " + path.string());
  for (const auto& [view, ids] : lists) {
    out << view << ":";
    for (const int id : ids) out << " " << id;
    out << "\n";
  }
}

KeyValues ParseKeyValues(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = Trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      ThrowInvalid(origin + ":" + std::to_string(lineno) + ": expected key=value");
    }
    kv.emplace(Trim(line.substr(0, eq)), Trim(line.substr(eq + 1)));
  }
  return kv;
}

KeyValues ReadKeyValues(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) ThrowIo("cannot open config: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ParseKeyValues(ss.str(), path.string());
}

std::string ViewStem(int view) {
  std::ostringstream os;
  os << std::setw(8) << std::setfill('0') << view;
  return os.str();
}

RgbImage UpsampleImage(const RgbImage& image, int factor) {
  CERMVS_CHECK(factor >= 1, "upsampling factor must be positive");
  CERMVS_CHECK(image.width > 0 && image.height > 0, "cannot upsample an empty image");
  RgbImage out(image.width * factor, image.height * factor);
  auto axis = [&](int dst, int extent, int& i0, int& i1, double& frac) {
    const double src = std::clamp((dst + 0.5) / factor - 0.5, 0.0, extent - 1.0);
    i0 = static_cast<int>(std::floor(src));
    i1 = std::min(i0 + 1, extent - 1);
    frac = src - i0;
  };
  for (int y = 0; y < out.height; ++y) {
    int y0, y1;
    double fy;
    axis(y, image.height, y0, y1, fy);
    for (int x = 0; x < out.width; ++x) {
      int x0, x1;
      double fx;
      axis(x, image.width, x0, x1, fx);
      for (int c = 0; c < 3; ++c) {
        const double top = (1 - fx) * image.pixel(y0, x0)[c] + fx * image.pixel(y0, x1)[c];
        const double bot = (1 - fx) * image.pixel(y1, x0)[c] + fx * image.pixel(y1, x1)[c];
        out.pixel(y, x)[c] = static_cast<std::uint8_t>(std::lround((1 - fy) * top + fy * bot));
      }
    }
  }
  return out;
}

}  // namespace cermvs
