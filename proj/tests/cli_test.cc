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

#include "cermvs/cli.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "cermvs/update.h"
#include "doctest.h"

namespace cermvs {
namespace {

namespace fs = std::filesystem;

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run Cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = RunCli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Every file under `a` exists under `b` with identical bytes.
bool SameTree(const fs::path& a, const fs::path& b) {
  int files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const fs::path other = b / fs::relative(entry.path(), a);
    if (!fs::exists(other) || Slurp(entry.path()) != Slurp(other)) return false;
    ++files;
  }
  return files > 0;
}

void WriteText(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

class Workspace {
 public:
  Workspace() : root_(fs::temp_directory_path() / "cermvs_cli_test") {
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  ~Workspace() { fs::remove_all(root_); }
  fs::path operator/(const std::string& name) const { return root_ / name; }
  std::string Path(const std::string& name) const { return (root_ / name).string(); }

 private:
  fs::path root_;
};

ModelConfig SmallConfig() {
  ModelConfig c;
  c.hidden_dim = 8;
  c.feature_dim = 8;
  c.encoder_widths = {8, 8, 8};
  c.corr_enc1 = 8;
  c.corr_enc2 = 8;
  c.disp_enc = 8;
  c.iters_stage1 = 2;
  c.iters_stage2 = 2;
  return c;
}

// Small scene plus a seeded checkpoint with non-zero decoders.
void Prepare(const Workspace& ws) {
  WriteText(ws / "scene.cfg",
            "views=3\nwidth=64\nheight=48\nfocal=200\nring_tilt_deg=10\ntexture_cell=20\n"
            "plane=0 0 600 0 0 -1\n");
  WeightSet w = InitWeights(SmallConfig(), 3);
  w.Mutable("dec1.bias")[0] = 8.0f;
  w.Mutable("dec2.bias")[0] = 1.0f;
  SaveCheckpoint(ws / "ckpt" / "tiny.manifest", w);
}

TEST_CASE("bench prints the cascade ratio") {
  const Run r = Cli({"bench"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("ratio 0.3375") != std::string::npos);
}

TEST_CASE("flags override the config file, which overrides defaults") {
  const Workspace ws;
  WriteText(ws / "bench.cfg", "# comment\ncoarse-samples=32\n");
  CHECK(Cli({"bench", "--config", ws.Path("bench.cfg")}).out.find("ratio 0.2375") !=
        std::string::npos);
  CHECK(Cli({"bench", "--config", ws.Path("bench.cfg"), "--coarse-samples", "64"})
            .out.find("ratio 0.3375") != std::string::npos);
}

TEST_CASE("exit codes") {
  const Workspace ws;
  CHECK(Cli({}).code == kExitInvalidInput);
  CHECK(Cli({"frobnicate"}).code == kExitInvalidInput);
  CHECK(Cli({"--help"}).code == kExitOk);
  CHECK(Cli({"bench", "--levels", "abc"}).code == kExitInvalidInput);
  WriteText(ws / "bad.cfg", "bogus=1\n");
  CHECK(Cli({"bench", "--config", ws.Path("bad.cfg")}).code == kExitInvalidInput);
  CHECK(Cli({"bench", "--config", ws.Path("missing.cfg")}).code == kExitIo);
  const Run missing = Cli({"eval", ws.Path("a.ply"), ws.Path("b.ply"), "--tau", "1"});
  CHECK(missing.code == kExitIo);
  CHECK(missing.err.find(".ply") != std::string::npos);
  CHECK(Cli({"eval", ws.Path("a.ply"), ws.Path("b.ply")}).code == kExitInvalidInput);
}

TEST_CASE("desk pipeline is idempotent and thread-count independent") {
  const Workspace ws;
  Prepare(ws);
  const std::string weights = ws.Path("ckpt/tiny.manifest");
  REQUIRE(Cli({"synth", ws.Path("scene.cfg"), "--out", ws.Path("scene")}).code == kExitOk);
  REQUIRE(Cli({"synth", ws.Path("scene.cfg"), "--out", ws.Path("scene2")}).code == kExitOk);
  CHECK(SameTree(ws / "scene", ws / "scene2"));

  for (const std::string run : {"a", "b"}) {
    const Run lr = Cli({"depth", ws.Path("scene"), "--out", ws.Path(run + "/lr"), "--weights",
                        weights, "--views", "2"});
    REQUIRE(lr.code == kExitOk);
    REQUIRE(Cli({"depth", ws.Path("scene"), "--out", ws.Path(run + "/hr"), "--weights", weights,
                 "--views", "2", "--resolution", "2x"})
                .code == kExitOk);
    REQUIRE(Cli({"fuse", ws.Path(run + "/lr"), ws.Path(run + "/hr"), "--out",
                 ws.Path(run + "/fused")})
                .code == kExitOk);
    const Run st = Cli({"stitch", ws.Path("scene"), ws.Path(run + "/fused"), "--out",
                        ws.Path(run + "/cloud.ply"), "--nmin", "1"});
    REQUIRE(st.code == kExitOk);
    CHECK(st.out.find("points=") != std::string::npos);
    const Run ev = Cli({"eval", ws.Path(run + "/cloud.ply"), ws.Path("scene/gt.ply"), "--tau", "5"});
    REQUIRE(ev.code == kExitOk);
    CHECK(ev.out.find("f1 ") != std::string::npos);
  }
  CHECK(SameTree(ws / "a", ws / "b"));

  ::setenv("CERMVS_THREADS", "3", 1);
  const Run threaded = Cli({"depth", ws.Path("scene"), "--out", ws.Path("c/lr"), "--weights",
                            weights, "--views", "2", "--threads", "1"});
  ::unsetenv("CERMVS_THREADS");
  CHECK(threaded.code == kExitOk);
  CHECK(SameTree(ws / "a/lr", ws / "c/lr"));
}

TEST_CASE("depth argument checks") {
  const Workspace ws;
  Prepare(ws);
  const std::string weights = ws.Path("ckpt/tiny.manifest");
  REQUIRE(Cli({"synth", ws.Path("scene.cfg"), "--out", ws.Path("scene")}).code == kExitOk);

  CHECK(Cli({"depth", ws.Path("scene"), "--out", ws.Path("d"), "--weights", weights, "--views",
             "0"})
            .code == kExitInvalidInput);
  CHECK(Cli({"depth", ws.Path("scene"), "--out", ws.Path("d"), "--weights", weights,
             "--resolution", "4x"})
            .code == kExitInvalidInput);
  CHECK(Cli({"depth", ws.Path("nowhere"), "--out", ws.Path("d"), "--weights", weights}).code ==
        kExitIo);

  const Run clamped = Cli({"depth", ws.Path("scene"), "--out", ws.Path("d"), "--weights",
                           weights, "--views", "9"});
  CHECK(clamped.code == kExitOk);
  CHECK(clamped.err.find("warning") != std::string::npos);

  ::setenv("CERMVS_THREADS", "many", 1);
  const Run bad_env = Cli({"depth", ws.Path("scene"), "--out", ws.Path("e"), "--weights", weights});
  ::unsetenv("CERMVS_THREADS");
  CHECK(bad_env.code == kExitInvalidInput);

  // Finite weights whose activations overflow.
  WeightSet broken = LoadCheckpoint(weights);
  for (auto& v : broken.Mutable("encc.conv1.weight").values()) v = 3e38f;
  SaveCheckpoint(ws / "broken" / "tiny.manifest", broken);
  const Run overflow = Cli({"depth", ws.Path("scene"), "--out", ws.Path("f"), "--weights",
                       ws.Path("broken/tiny.manifest")});
  CHECK(overflow.code == kExitNumerical);
  CHECK(overflow.err.find("encc.conv1") != std::string::npos);
}

TEST_CASE("fuse rejects mismatched scale records") {
  const Workspace ws;
  Prepare(ws);
  const std::string weights = ws.Path("ckpt/tiny.manifest");
  REQUIRE(Cli({"synth", ws.Path("scene.cfg"), "--out", ws.Path("scene")}).code == kExitOk);
  REQUIRE(Cli({"depth", ws.Path("scene"), "--out", ws.Path("lr"), "--weights", weights}).code ==
          kExitOk);
  REQUIRE(Cli({"depth", ws.Path("scene"), "--out", ws.Path("hr"), "--weights", weights,
               "--resolution", "2x", "--scale-mode", "none"})
              .code == kExitOk);
  CHECK(Cli({"fuse", ws.Path("lr"), ws.Path("hr"), "--out", ws.Path("fused")}).code ==
        kExitInvalidInput);
}

TEST_CASE("scale records round trip") {
  const Workspace ws;
  const ScaleRecord r{1.25, ScaleMode::kGtMedian600};
  WriteScaleRecord(ws / "v.scale", r);
  const ScaleRecord back = ReadScaleRecord(ws / "v.scale");
  CHECK(back.factor == r.factor);
  CHECK(back.mode == r.mode);
}

TEST_CASE("parallel for visits every index once") {
  std::vector<int> hits(97, 0);
  ParallelFor(97, 4, [&](int i) { hits[i] += 1; });
  for (const int h : hits) CHECK(h == 1);
}

}  // namespace
}  // namespace cermvs
