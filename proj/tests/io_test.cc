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

#include <filesystem>
#include <fstream>
#include <random>

#include "cermvs/error.h"
#include "doctest.h"

namespace cermvs {
namespace {

std::filesystem::path TempPath(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("cermvs_io_" + name);
}

TEST_CASE("PFM round-trip keeps row order") {
  FloatMap map(5, 3);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 5; ++x) map.at(y, x) = static_cast<float>(10 * y + x) + 0.25f;
  const auto path = TempPath("a.pfm");
  WritePfm(path, map);
  CHECK(ReadPfm(path) == map);

  // First payload row on disk is the bottom image row.
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  int w, h;
  double scale;
  in >> magic >> w >> h >> scale;
  in.get();
  float first;
  in.read(reinterpret_cast<char*>(&first), sizeof(first));
  CHECK(first == map.at(2, 0));
  CHECK(scale < 0);
  std::filesystem::remove(path);
}

TEST_CASE("PFM reader rejects color and truncated files") {
  const auto path = TempPath("bad.pfm");
  {
    std::ofstream out(path, std::ios::binary);
    out << "PF\n2 2\n-1\n";
  }
  CHECK_THROWS_AS(ReadPfm(path), Error);
  {
    std::ofstream out(path, std::ios::binary);
    out << "Pf\n2 2\n-1\n" << "abc";
  }
  CHECK_THROWS_AS(ReadPfm(path), Error);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(ReadPfm(path), Error);
}

TEST_CASE("PPM round-trip") {
  std::mt19937 rng(31);
  RgbImage img(7, 4);
  for (auto& v : img.rgb) v = static_cast<std::uint8_t>(rng());
  const auto path = TempPath("a.ppm");
  WritePpm(path, img);
  CHECK(ReadPpm(path) == img);
  std::filesystem::remove(path);
}

TEST_CASE("PLY round-trip and strict layout") {
  PointCloud cloud = {{1.5f, -2.0f, 600.0f, 10, 20, 30}, {0.0f, 0.0f, 1.0f, 255, 0, 7}};
  const auto path = TempPath("a.ply");
  WritePly(path, cloud);
  CHECK(ReadPly(path) == cloud);
  CHECK(std::filesystem::file_size(path) > 2 * 15u);
  {
    std::ofstream out(path);
    out << "ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nend_header\n";
  }
  CHECK_THROWS_AS(ReadPly(path), Error);
  WritePly(path, {});
  CHECK(ReadPly(path).empty());
  std::filesystem::remove(path);
}

TEST_CASE("neighbor lists round-trip") {
  const NeighborLists lists = {{0, {1, 2, 3}}, {1, {0}}, {5, {}}};
  const auto path = TempPath("nbrs.txt");
  WriteNeighborLists(path, lists);
  CHECK(ReadNeighborLists(path) == lists);
  {
    std::ofstream out(path);
    out << "0 1 2\n";
  }
  CHECK_THROWS_AS(ReadNeighborLists(path), Error);
  std::filesystem::remove(path);
}

TEST_CASE("key value parsing") {
  const KeyValues kv = ParseKeyValues("a = 1\n# comment\n\nplane=0 0 1 # trailing\nplane=2\n", "t");
  CHECK(kv.count("plane") == 2);
  CHECK(kv.find("a")->second == "1");
  CHECK(kv.find("plane")->second == "0 0 1");
  CHECK_THROWS_AS(ParseKeyValues("novalue\n", "t"), Error);
  CHECK(ViewStem(3) == "00000003");
}

}  // namespace
}  // namespace cermvs
