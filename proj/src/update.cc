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

#include "cermvs/update.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "cermvs/error.h"

namespace cermvs {

namespace {

constexpr double kNormEps = 1e-5;
constexpr int kDispTaps = 7;

using Shape = Tensor::Shape;

Shape Dims(std::initializer_list<int> dims) {
  Shape s;
  for (const int d : dims) s.push_back(static_cast<std::size_t>(d));
  return s;
}

// ---- layer naming ---------------------------------------------------------

struct ConvSpec {
  std::string name;
  int cout, cin, k;
};

struct EncoderLayout {
  std::vector<ConvSpec> convs;
};

// Stem, six residual blocks (two per ratio, the first of ratios 2 and 4 with
// stride 2 and a 1x1 skip), then a 1x1 projection.
EncoderLayout EncoderConvs(const std::string& prefix, const std::array<int, 3>& widths,
                           int out_dim) {
  EncoderLayout layout;
  layout.convs.push_back({prefix + ".stem", widths[0], 3, 3});
  int cin = widths[0];
  for (int b = 0; b < 6; ++b) {
    const int width = widths[b / 2];
    const std::string name = prefix + ".block" + std::to_string(b + 1);
    layout.convs.push_back({name + ".conv1", width, cin, 3});
    layout.convs.push_back({name + ".conv2", width, width, 3});
    if (b == 2 || b == 4) layout.convs.push_back({name + ".skip", width, cin, 1});
    cin = width;
  }
  layout.convs.push_back({prefix + ".proj", out_dim, cin, 1});
  return layout;
}

std::vector<ConvSpec> AllConvs(const ModelConfig& c) {
  std::vector<ConvSpec> all = EncoderConvs("fnet", c.encoder_widths, c.feature_dim).convs;
  const auto ctx = EncoderConvs("cnet", c.encoder_widths, 2 * c.hidden_dim).convs;
  all.insert(all.end(), ctx.begin(), ctx.end());
  const int corr_dim = c.radius * c.num_levels;
  all.push_back({"encc.conv1", c.corr_enc1, corr_dim, 3});
  all.push_back({"encc.conv2", c.corr_enc2, c.corr_enc1, 3});
  all.push_back({"encd.conv", c.disp_enc, kDispTaps * kDispTaps, 3});
  const int gru_in = c.hidden_dim + c.input_dim();
  all.push_back({"gru.z", c.hidden_dim, gru_in, 3});
  all.push_back({"gru.r", c.hidden_dim, gru_in, 3});
  all.push_back({"gru.q", c.hidden_dim, gru_in, 3});
  all.push_back({"dec1", 1, c.hidden_dim, 3});
  all.push_back({"dec2", 1, c.hidden_dim, 3});
  return all;
}

// Batch-norm layers of the context encoder: every conv except the projection.
bool HasBatchNorm(const std::string& name) {
  return name.rfind("cnet.", 0) == 0 && name != "cnet.proj";
}

// ---- primitive layers -----------------------------------------------------

Tensor Conv(const Tensor& x, const WeightSet& w, const std::string& name, int stride = 1) {
  const Tensor& k = w.Get(name + ".weight");
  return Conv2dForward(x, k, w.Get(name + ".bias"), stride, static_cast<int>(k.dim(2)) / 2);
}

void ReluInPlace(Tensor& t) {
  for (auto& v : t.values()) v = std::max(v, 0.0f);
}

void InstanceNormInPlace(Tensor& t) {
  const std::size_t plane = t.dim(1) * t.dim(2);
  for (std::size_t c = 0; c < t.dim(0); ++c) {
    float* p = t.channel(c);
    double mean = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mean += p[i];
    mean /= static_cast<double>(plane);
    double var = 0.0;
    for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mean) * (p[i] - mean);
    var /= static_cast<double>(plane);
    const double inv = 1.0 / std::sqrt(var + kNormEps);
    for (std::size_t i = 0; i < plane; ++i) p[i] = static_cast<float>((p[i] - mean) * inv);
  }
}

void BatchNormInPlace(Tensor& t, const WeightSet& w, const std::string& name) {
  const Tensor& mean = w.Get(name + ".bn.mean");
  const Tensor& var = w.Get(name + ".bn.var");
  const Tensor& gamma = w.Get(name + ".bn.gamma");
  const Tensor& beta = w.Get(name + ".bn.beta");
  const std::size_t plane = t.dim(1) * t.dim(2);
  for (std::size_t c = 0; c < t.dim(0); ++c) {
    const double scale = gamma[c] / std::sqrt(static_cast<double>(var[c]) + kNormEps);
    const double shift = beta[c] - mean[c] * scale;
    float* p = t.channel(c);
    for (std::size_t i = 0; i < plane; ++i) p[i] = static_cast<float>(p[i] * scale + shift);
  }
}

void AddInPlace(Tensor& a, const Tensor& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

Tensor Concat(std::initializer_list<const Tensor*> parts) {
  std::size_t channels = 0;
  const Tensor& first = **parts.begin();
  for (const Tensor* p : parts) {
    CERMVS_CHECK(p->dim(1) == first.dim(1) && p->dim(2) == first.dim(2),
                 "channel concat needs equal spatial extents");
    channels += p->dim(0);
  }
  Tensor out({channels, first.dim(1), first.dim(2)});
  std::size_t offset = 0;
  for (const Tensor* p : parts) {
    std::copy(p->values().begin(), p->values().end(), out.values().begin() + offset);
    offset += p->size();
  }
  return out;
}

void CheckFinite(const Tensor& t, const std::string& layer) {
  if (!t.AllFinite()) ThrowNumerical("non-finite activation in layer " + layer);
}

// Shared encoder body; `batch_norm` selects stored statistics over per-image
// instance statistics.
Tensor RunEncoder(const Tensor& image, const WeightSet& w, const std::string& prefix,
                  bool batch_norm) {
  CERMVS_CHECK(image.rank() == 3 && image.dim(0) == 3, "encoder expects a [3,H,W] image");
  CERMVS_CHECK(image.dim(1) % 4 == 0 && image.dim(2) % 4 == 0,
               "image extents must be divisible by the feature downsize 4");
  auto norm = [&](Tensor& t, const std::string& name) {
    if (batch_norm) {
      BatchNormInPlace(t, w, name);
    } else {
      InstanceNormInPlace(t);
    }
  };
  Tensor x = Conv(image, w, prefix + ".stem");
  norm(x, prefix + ".stem");
  ReluInPlace(x);
  for (int b = 0; b < 6; ++b) {
    const std::string name = prefix + ".block" + std::to_string(b + 1);
    const bool down = b == 2 || b == 4;
    Tensor y = Conv(x, w, name + ".conv1", down ? 2 : 1);
    norm(y, name + ".conv1");
    ReluInPlace(y);
    y = Conv(y, w, name + ".conv2");
    norm(y, name + ".conv2");
    if (down) {
      Tensor skip = Conv(x, w, name + ".skip", 2);
      norm(skip, name + ".skip");
      AddInPlace(y, skip);
    } else {
      AddInPlace(y, x);
    }
    ReluInPlace(y);
    x = std::move(y);
  }
  Tensor out = Conv(x, w, prefix + ".proj");
  CheckFinite(out, prefix + ".proj");
  return out;
}

std::uint64_t Fnv1a(const void* data, std::size_t bytes) {
  std::uint64_t h = 1469598103934665603ull;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

// ---- config / weights -----------------------------------------------------

Stage1Params ModelConfig::stage1() const {
  return {coarse_samples, max_disparity, num_levels, downsize};
}

Stage2Params ModelConfig::stage2() const {
  return {radius, num_levels, fine_increment, downsize};
}

void ModelConfig::Validate() const {
  CERMVS_CHECK(iters_stage1 >= 0 && iters_stage2 >= 0, "iteration counts must be >= 0");
  CERMVS_CHECK(hidden_dim >= 1 && feature_dim >= 1 && corr_enc1 >= 1 && corr_enc2 >= 1 &&
                   disp_enc >= 1,
               "layer widths must be positive");
  for (const int w : encoder_widths) CERMVS_CHECK(w >= 1, "encoder widths must be positive");
  CERMVS_CHECK(num_levels >= 1 && radius >= 1 && radius % 2 == 1,
               "need L >= 1 and an odd lookup radius");
  CERMVS_CHECK(coarse_samples % (1 << (num_levels - 1)) == 0,
               "coarse sample count must be divisible by 2^(L-1)");
  CERMVS_CHECK(max_disparity > 0.0 && fine_increment > 0.0, "disparity range must be positive");
  CERMVS_CHECK(downsize == 4, "the encoders produce features at 1/4 resolution");
}

const Tensor& WeightSet::Get(const std::string& name) const {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) ThrowInvalid("weight set has no tensor '" + name + "'");
  return it->second;
}

Tensor& WeightSet::Mutable(const std::string& name) {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) ThrowInvalid("weight set has no tensor '" + name + "'");
  return it->second;
}

void WeightSet::Set(const std::string& name, Tensor value) {
  tensors_[name] = std::move(value);
}

std::uint64_t WeightSet::Checksum(const std::string& name) const {
  const Tensor& t = Get(name);
  return Fnv1a(t.data(), t.size() * sizeof(float));
}

void WeightSet::Validate() const {
  config.Validate();
  for (const auto& spec : AllConvs(config)) {
    const Tensor& k = Get(spec.name + ".weight");
    if (k.shape() != Dims({spec.cout, spec.cin, spec.k, spec.k})) {
      ThrowInvalid("tensor " + spec.name + ".weight has shape " + ShapeToString(k.shape()));
    }
    if (Get(spec.name + ".bias").size() != static_cast<std::size_t>(spec.cout)) {
      ThrowInvalid("tensor " + spec.name + ".bias has the wrong length");
    }
  }
  for (const auto& [name, t] : tensors_) {
    if (!t.AllFinite()) ThrowInvalid("weight tensor '" + name + "' is not finite");
  }
}

WeightSet ZeroWeights(const ModelConfig& config) {
  config.Validate();
  WeightSet w;
  w.config = config;
  for (const auto& spec : AllConvs(config)) {
    w.Set(spec.name + ".weight", Tensor(Dims({spec.cout, spec.cin, spec.k, spec.k}), 0.0f));
    w.Set(spec.name + ".bias", Tensor(Dims({spec.cout}), 0.0f));
    if (HasBatchNorm(spec.name)) {
      w.Set(spec.name + ".bn.mean", Tensor(Dims({spec.cout}), 0.0f));
      w.Set(spec.name + ".bn.var", Tensor(Dims({spec.cout}), 1.0f));
      w.Set(spec.name + ".bn.gamma", Tensor(Dims({spec.cout}), 1.0f));
      w.Set(spec.name + ".bn.beta", Tensor(Dims({spec.cout}), 0.0f));
    }
  }
  return w;
}

WeightSet InitWeights(const ModelConfig& config, std::uint64_t seed, const InitScales& scales) {
  WeightSet w = ZeroWeights(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& spec : AllConvs(config)) {
    if (spec.name == "dec1" || spec.name == "dec2") continue;
    const double fan_in = static_cast<double>(spec.cin) * spec.k * spec.k;
    double stddev = 1.0 / std::sqrt(fan_in);
    if (spec.name.rfind("fnet.", 0) == 0 || spec.name.rfind("cnet.", 0) == 0) {
      stddev = scales.encoder * std::sqrt(2.0 / fan_in);
      if (spec.name == "cnet.proj") stddev *= scales.context;
      if (spec.name.ends_with(".conv2")) stddev *= scales.residual;
    } else if (spec.name.rfind("encc.", 0) == 0) {
      stddev = scales.corr * std::sqrt(2.0 / fan_in);
    } else if (spec.name == "encd.conv") {
      stddev = scales.disparity * std::sqrt(2.0 / fan_in) / config.fine_increment;
    } else if (spec.name.rfind("gru.", 0) == 0) {
      stddev = scales.gru / std::sqrt(fan_in);
    }
    Tensor& k = w.Mutable(spec.name + ".weight");
    for (auto& v : k.values()) v = static_cast<float>(stddev * normal(rng));
  }
  return w;
}

void SaveCheckpoint(const std::filesystem::path& manifest, const WeightSet& weights) {
  weights.Validate();
  const ModelConfig& c = weights.config;
  const std::filesystem::path dir = manifest.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  std::ofstream out(manifest);
  if (!out) ThrowIo("cannot write checkpoint manifest " + manifest.string());
  out << std::setprecision(17);
  out << "# cermvs checkpoint\n"
      << "T1=" << c.iters_stage1 << "\nT2=" << c.iters_stage2 << "\nDh=" << c.hidden_dim
      << "\nDf=" << c.feature_dim << "\nL=" << c.num_levels << "\nR=" << c.radius
      << "\nD=" << c.coarse_samples << "\ndownsize=" << c.downsize
      << "\nd_max=" << c.max_disparity << "\ncoarse_increment=" << c.coarse_increment()
      << "\nfine_increment=" << c.fine_increment << "\nencoder_widths="
      << c.encoder_widths[0] << " " << c.encoder_widths[1] << " " << c.encoder_widths[2]
      << "\nencoder_c=" << c.corr_enc1 << " " << c.corr_enc2 << "\nencoder_d=" << c.disp_enc
      << "\n";
  const std::string stem = manifest.stem().string();
  for (const auto& [name, t] : weights.tensors()) {
    const std::string file = stem + "." + name + ".tnsr";
    WriteTensor(dir / file, t);
    out << "layer=" << name << " " << file << "\n";
  }
  if (!out) ThrowIo("failed writing checkpoint manifest " + manifest.string());
}

WeightSet LoadCheckpoint(const std::filesystem::path& manifest) {
  const KeyValues kv = ReadKeyValues(manifest);
  ModelConfig c;
  auto ints = [&](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) ThrowInvalid("checkpoint " + manifest.string() + " lacks '" + key + "'");
    std::istringstream in(it->second);
    std::vector<double> values;
    double v = 0;
    while (in >> v) values.push_back(v);
    if (values.empty()) ThrowInvalid("checkpoint key '" + key + "' has no value");
    return values;
  };
  c.iters_stage1 = static_cast<int>(ints("T1")[0]);
  c.iters_stage2 = static_cast<int>(ints("T2")[0]);
  c.hidden_dim = static_cast<int>(ints("Dh")[0]);
  c.feature_dim = static_cast<int>(ints("Df")[0]);
  c.num_levels = static_cast<int>(ints("L")[0]);
  c.radius = static_cast<int>(ints("R")[0]);
  c.coarse_samples = static_cast<int>(ints("D")[0]);
  c.downsize = static_cast<int>(ints("downsize")[0]);
  c.max_disparity = ints("d_max")[0];
  c.fine_increment = ints("fine_increment")[0];
  const auto widths = ints("encoder_widths");
  CERMVS_CHECK(widths.size() == 3, "encoder_widths needs three values");
  for (int i = 0; i < 3; ++i) c.encoder_widths[i] = static_cast<int>(widths[i]);
  const auto enc_c = ints("encoder_c");
  CERMVS_CHECK(enc_c.size() == 2, "encoder_c needs two values");
  c.corr_enc1 = static_cast<int>(enc_c[0]);
  c.corr_enc2 = static_cast<int>(enc_c[1]);
  c.disp_enc = static_cast<int>(ints("encoder_d")[0]);

  WeightSet w;
  w.config = c;
  const auto dir = manifest.parent_path();
  const auto [begin, end] = kv.equal_range("layer");
  for (auto it = begin; it != end; ++it) {
    std::istringstream in(it->second);
    std::string name, file;
    if (!(in >> name >> file)) ThrowInvalid("bad layer entry '" + it->second + "'");
    w.Set(name, ReadTensor(dir / file));
  }
  w.Validate();
  return w;
}

// ---- encoders -------------------------------------------------------------

Tensor ImageToTensor(const RgbImage& image) {
  Tensor t(Dims({3, image.height, image.width}));
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const std::uint8_t* px = image.pixel(y, x);
      for (int c = 0; c < 3; ++c) t.at(c, y, x) = px[c] / 127.5f - 1.0f;
    }
  }
  return t;
}

Tensor EncodeFeatures(const Tensor& image, const WeightSet& weights) {
  return RunEncoder(image, weights, "fnet", false);
}

ContextOutput EncodeContext(const Tensor& image, const WeightSet& weights) {
  const Tensor raw = RunEncoder(image, weights, "cnet", true);
  const std::size_t dh = static_cast<std::size_t>(weights.config.hidden_dim);
  const std::size_t plane = raw.dim(1) * raw.dim(2);
  ContextOutput out{Tensor({dh, raw.dim(1), raw.dim(2)}), Tensor({dh, raw.dim(1), raw.dim(2)})};
  for (std::size_t i = 0; i < dh * plane; ++i) {
    out.context[i] = std::max(raw[i], 0.0f);
    out.hidden[i] = std::tanh(raw[dh * plane + i]);
  }
  return out;
}

Tensor EncodeDisparity(const DisparityField& d) {
  d.Validate();
  const int h = d.height, w = d.width;
  Tensor out(Dims({kDispTaps * kDispTaps, h, w}));
  for (int dy = -3; dy <= 3; ++dy) {
    for (int dx = -3; dx <= 3; ++dx) {
      const int c = (dy + 3) * kDispTaps + (dx + 3);
      for (int y = 0; y < h; ++y) {
        const int yy = std::clamp(y + dy, 0, h - 1);
        for (int x = 0; x < w; ++x) {
          const int xx = std::clamp(x + dx, 0, w - 1);
          out.at(c, y, x) = d.at(yy, xx) - d.at(y, x);
        }
      }
    }
  }
  return out;
}

// ---- recurrent update -----------------------------------------------------

Tensor GruInput(const UpdateState& state, const Tensor& corr, const WeightSet& weights) {
  Tensor disp = Conv(EncodeDisparity(state.d), weights, "encd.conv");
  ReluInPlace(disp);
  CheckFinite(disp, "encd.conv");
  Tensor c1 = Conv(corr, weights, "encc.conv1");
  ReluInPlace(c1);
  CheckFinite(c1, "encc.conv1");
  Tensor c2 = Conv(c1, weights, "encc.conv2");
  ReluInPlace(c2);
  CheckFinite(c2, "encc.conv2");
  return Concat({&disp, &c2, &state.context});
}

UpdateState GruStep(const UpdateState& state, const Tensor& corr, const WeightSet& weights) {
  const ModelConfig& c = weights.config;
  CERMVS_CHECK(state.h.rank() == 3 && state.h.dim(0) == static_cast<std::size_t>(c.hidden_dim),
               "hidden state must be [Dh,Hf,Wf]");
  CERMVS_CHECK(state.context.shape() == state.h.shape(), "context and hidden shapes differ");
  CERMVS_CHECK(state.d.width == static_cast<int>(state.h.dim(2)) &&
                   state.d.height == static_cast<int>(state.h.dim(1)),
               "disparity grid does not match the hidden state");
  const Tensor x = GruInput(state, corr, weights);
  const Tensor hx = Concat({&state.h, &x});

  Tensor z = Conv(hx, weights, "gru.z");
  for (auto& v : z.values()) v = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
  CheckFinite(z, "gru.z");
  Tensor r = Conv(hx, weights, "gru.r");
  for (auto& v : r.values()) v = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
  CheckFinite(r, "gru.r");

  Tensor rh = state.h;
  for (std::size_t i = 0; i < rh.size(); ++i) rh[i] *= r[i];
  Tensor q = Conv(Concat({&rh, &x}), weights, "gru.q");
  for (auto& v : q.values()) v = std::tanh(v);
  CheckFinite(q, "gru.q");

  UpdateState next = state;
  for (std::size_t i = 0; i < next.h.size(); ++i) {
    next.h[i] = (1.0f - z[i]) * state.h[i] + z[i] * q[i];
  }
  next.t = state.t + 1;
  return next;
}

DisparityField DecodeDelta(const UpdateState& state, const WeightSet& weights) {
  const ModelConfig& c = weights.config;
  const bool first = state.t <= c.iters_stage1;
  const Tensor out = Conv(state.h, weights, first ? "dec1" : "dec2");
  const double inc = first ? c.coarse_increment() : c.fine_increment;
  DisparityField delta(static_cast<int>(out.dim(2)), static_cast<int>(out.dim(1)));
  for (std::size_t i = 0; i < delta.size(); ++i) {
    delta.values[i] = static_cast<float>(out[i] * inc);
  }
  for (const float v : delta.values) {
    if (!std::isfinite(v)) ThrowNumerical(std::string("non-finite activation in layer ") +
                                          (first ? "dec1" : "dec2"));
  }
  return delta;
}

DisparityField ApplyDelta(const DisparityField& d, const DisparityField& delta) {
  CERMVS_CHECK(d.SameGrid(delta), "disparity increment grid mismatch");
  DisparityField out = d;
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = std::max(0.0f, d.values[i] + delta.values[i]);
  return out;
}

DisparityField RunInferenceOnFeatures(const Tensor& ref_feat, const ContextOutput& ctx,
                                      std::span<const Tensor> nbr_feats,
                                      std::span<const CameraModel> cams,
                                      const WeightSet& weights, InferenceTrace* trace) {
  const ModelConfig& c = weights.config;
  CERMVS_CHECK(!nbr_feats.empty(), "inference needs at least one neighbor view");
  const int hf = static_cast<int>(ref_feat.dim(1));
  const int wf = static_cast<int>(ref_feat.dim(2));
  CERMVS_CHECK(ctx.hidden.dim(1) == ref_feat.dim(1) && ctx.hidden.dim(2) == ref_feat.dim(2),
               "context and feature grids differ");

  UpdateState state{ctx.hidden, ctx.context, DisparityField(wf, hf, 0.0f), 0};
  if (trace) *trace = InferenceTrace{};

  auto iterate = [&](const CostVolumeStack& stack, int count) {
    for (int i = 0; i < count; ++i) {
      const Tensor corr = FuseViews(LookupVolume(stack, state.d, c.radius));
      state = GruStep(state, corr, weights);
      const DisparityField delta = DecodeDelta(state, weights);
      DisparityField next = ApplyDelta(state.d, delta);
      if (trace) {
        std::vector<std::uint8_t> clamped(next.size());
        for (std::size_t p = 0; p < next.size(); ++p) {
          clamped[p] = state.d.values[p] + delta.values[p] < 0.0f ? 1 : 0;
        }
        trace->clamped.push_back(std::move(clamped));
        trace->hidden.push_back(state.h);
        trace->preds.push_back(next);
      }
      state.d = std::move(next);
    }
  };

  const CostVolumeStack coarse = BuildStage1Volume(ref_feat, nbr_feats, cams, c.stage1());
  iterate(coarse, c.iters_stage1);
  if (trace) trace->stage2_centers = state.d;
  const CostVolumeStack fine = BuildStage2Volume(ref_feat, nbr_feats, cams, state.d, c.stage2());
  iterate(fine, c.iters_stage2);
  return state.d;
}

DisparityField RunInference(const RgbImage& ref, std::span<const RgbImage> nbrs,
                            std::span<const CameraModel> cams, const WeightSet& weights,
                            InferenceTrace* trace) {
  CERMVS_CHECK(!nbrs.empty(), "inference needs at least one neighbor view");
  CERMVS_CHECK(cams.size() == nbrs.size() + 1, "need one camera per view");
  for (const auto& img : nbrs) {
    CERMVS_CHECK(img.width == ref.width && img.height == ref.height,
                 "all views must have the same image size");
  }
  const Tensor ref_t = ImageToTensor(ref);
  const Tensor ref_feat = EncodeFeatures(ref_t, weights);
  const ContextOutput ctx = EncodeContext(ref_t, weights);
  std::vector<Tensor> nbr_feats;
  nbr_feats.reserve(nbrs.size());
  for (const auto& img : nbrs) nbr_feats.push_back(EncodeFeatures(ImageToTensor(img), weights));
  return RunInferenceOnFeatures(ref_feat, ctx, nbr_feats, cams, weights, trace);
}

DecoderGradient DecoderWeightGradient(const Tensor& h, const DisparityField& upstream) {
  const int dh = static_cast<int>(h.dim(0));
  const int height = static_cast<int>(h.dim(1));
  const int width = static_cast<int>(h.dim(2));
  CERMVS_CHECK(upstream.width == width && upstream.height == height,
               "decoder gradient grid mismatch");
  DecoderGradient g{Tensor(Dims({1, dh, 3, 3}), 0.0f), 0.0};
  for (const float u : upstream.values) g.bias += u;
  for (int c = 0; c < dh; ++c) {
    const float* hc = h.channel(c);
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double acc = 0.0;
        for (int y = 0; y < height; ++y) {
          const int iy = y + ky - 1;
          if (iy < 0 || iy >= height) continue;
          for (int x = 0; x < width; ++x) {
            const int ix = x + kx - 1;
            if (ix < 0 || ix >= width) continue;
            acc += static_cast<double>(upstream.at(y, x)) * hc[iy * width + ix];
          }
        }
        g.weight[(c * 3 + ky) * 3 + kx] = static_cast<float>(acc);
      }
    }
  }
  return g;
}

}  // namespace cermvs
