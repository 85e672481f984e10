// SPDX-License-Identifier: Apache-2.0
#include "glag/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>

#include "glag/error.hpp"

namespace glag {

std::size_t ModelParams::input_dim() const {
  return feature_layers.empty() ? classifier_weight.cols() : feature_layers.front().weight.cols();
}

std::size_t ModelParams::feature_dim() const { return classifier_weight.cols(); }

void ModelParams::validate() const {
  std::size_t width = input_dim();
  for (const auto& layer : feature_layers) {
    GLAG_EXPECT(layer.weight.cols() == width, "feature layers do not chain");
    GLAG_EXPECT(layer.bias.size() == layer.weight.rows(), "bias width mismatch");
    width = layer.weight.rows();
  }
  GLAG_EXPECT(classifier_weight.cols() == width, "classifier width does not match feature width");
  GLAG_EXPECT(classifier_bias.size() == classifier_weight.rows(), "classifier bias mismatch");
  GLAG_EXPECT(scales.empty() || scales.size() == classifier_weight.rows(), "scale count mismatch");
  for (double s : scales) GLAG_EXPECT(s > 0.0, "scale factors must be positive");
}

namespace {

Matrix uniform_init(std::size_t out, std::size_t in, Rng& rng) {
  Matrix w(out, in);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  return w;
}

// out = inputs * W^T + b
Matrix affine(const Matrix& inputs, const Matrix& weight, const Vector& bias) {
  GLAG_EXPECT(inputs.cols() == weight.cols(), "input width does not match layer");
  Matrix out(inputs.rows(), weight.rows());
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    auto x = inputs.row(i);
    auto o = out.row(i);
    for (std::size_t r = 0; r < weight.rows(); ++r) {
      auto w = weight.row(r);
      double acc = bias[r];
      for (std::size_t c = 0; c < w.size(); ++c) acc += w[c] * x[c];
      o[r] = acc;
    }
  }
  return out;
}

void apply_activation(Matrix& m, Activation act) {
  if (act == Activation::Relu)
    for (double& v : m.data()) v = v > 0.0 ? v : 0.0;
}

Matrix scaled_logits(const ModelParams& p, const Matrix& features, Matrix* unscaled) {
  Matrix z = affine(features, p.classifier_weight, Vector(p.num_classes(), 0.0));
  if (unscaled) *unscaled = z;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto r = z.row(i);
    for (std::size_t k = 0; k < r.size(); ++k) {
      if (p.scaling_enabled()) r[k] *= p.scales[k];
      r[k] += p.classifier_bias[k];
    }
  }
  return z;
}

Matrix as_row(std::span<const double> x) { return Matrix(1, x.size(), Vector(x.begin(), x.end())); }

}  // namespace

ModelParams init_model(std::size_t input_dim, std::span<const std::size_t> hidden,
                       std::size_t num_classes, Rng& rng) {
  GLAG_EXPECT(input_dim > 0 && num_classes > 0, "model dimensions must be positive");
  ModelParams p;
  std::size_t width = input_dim;
  for (std::size_t h : hidden) {
    GLAG_EXPECT(h > 0, "hidden width must be positive");
    p.feature_layers.push_back({uniform_init(h, width, rng), Vector(h, 0.0), Activation::Relu});
    width = h;
  }
  p.classifier_weight = uniform_init(num_classes, width, rng);
  p.classifier_bias.assign(num_classes, 0.0);
  return p;
}

void reset_classifier(ModelParams& params, Rng& rng) {
  const std::size_t l = params.num_classes();
  params.classifier_weight = uniform_init(l, params.feature_dim(), rng);
  params.classifier_bias.assign(l, 0.0);
  params.scales.clear();
}

void enable_scaling(ModelParams& params) {
  if (!params.scaling_enabled()) params.scales.assign(params.num_classes(), 1.0);
}

Vector extract_feature(const ModelParams& params, std::span<const double> x) {
  return extract_features(params, as_row(x)).data();
}

Vector classifier_logits(const ModelParams& params, std::span<const double> feature) {
  GLAG_EXPECT(feature.size() == params.feature_dim(), "feature dimension mismatch");
  return classifier_logits(params, as_row(feature)).data();
}

ForwardResult forward(const ModelParams& params, std::span<const double> x) {
  GLAG_EXPECT(x.size() == params.input_dim(), "input dimension mismatch");
  ForwardResult r;
  r.feature = extract_feature(params, x);
  r.logits = classifier_logits(params, r.feature);
  return r;
}

Matrix extract_features(const ModelParams& params, const Matrix& inputs) {
  GLAG_EXPECT(inputs.cols() == params.input_dim(), "input dimension mismatch");
  Matrix h = inputs;
  for (const auto& layer : params.feature_layers) {
    h = affine(h, layer.weight, layer.bias);
    apply_activation(h, layer.activation);
  }
  return h;
}

Matrix classifier_logits(const ModelParams& params, const Matrix& features) {
  GLAG_EXPECT(features.cols() == params.feature_dim(), "feature dimension mismatch");
  return scaled_logits(params, features, nullptr);
}

BatchCache forward_batch(const ModelParams& params, const Matrix& inputs) {
  GLAG_EXPECT(inputs.cols() == params.input_dim(), "input dimension mismatch");
  BatchCache cache;
  cache.activations.push_back(inputs);
  for (const auto& layer : params.feature_layers) {
    Matrix pre = affine(cache.activations.back(), layer.weight, layer.bias);
    Matrix act = pre;
    apply_activation(act, layer.activation);
    cache.pre_activations.push_back(std::move(pre));
    cache.activations.push_back(std::move(act));
  }
  cache.logits = scaled_logits(params, cache.features(), nullptr);
  return cache;
}

namespace {

// Classifier gradients plus d(loss)/d(features) when requested.
Gradients classifier_grads(const ModelParams& p, const Matrix& features, const Matrix& dz,
                           Matrix* dfeatures) {
  GLAG_EXPECT(dz.rows() == features.rows() && dz.cols() == p.num_classes(),
              "logit gradient must be batch x L");
  const std::size_t L = p.num_classes();
  const std::size_t F = p.feature_dim();
  Gradients g;
  g.classifier_weight = Matrix(L, F);
  g.classifier_bias.assign(L, 0.0);
  if (p.scaling_enabled()) g.scales.assign(L, 0.0);
  if (dfeatures) *dfeatures = Matrix(features.rows(), F);

  Vector du(L);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    auto f = features.row(i);
    auto dzi = dz.row(i);
    for (std::size_t k = 0; k < L; ++k) {
      g.classifier_bias[k] += dzi[k];
      if (p.scaling_enabled()) {
        // d/ds_k = dz_k * (W_k . f)
        auto w = p.classifier_weight.row(k);
        double u = 0.0;
        for (std::size_t c = 0; c < F; ++c) u += w[c] * f[c];
        g.scales[k] += dzi[k] * u;
        du[k] = dzi[k] * p.scales[k];
      } else {
        du[k] = dzi[k];
      }
      if (du[k] == 0.0) continue;
      auto gw = g.classifier_weight.row(k);
      for (std::size_t c = 0; c < F; ++c) gw[c] += du[k] * f[c];
    }
    if (dfeatures) {
      auto df = dfeatures->row(i);
      for (std::size_t k = 0; k < L; ++k) {
        if (du[k] == 0.0) continue;
        auto w = p.classifier_weight.row(k);
        for (std::size_t c = 0; c < F; ++c) df[c] += du[k] * w[c];
      }
    }
  }
  return g;
}

}  // namespace

Gradients classifier_backward(const ModelParams& params, const Matrix& features,
                              const Matrix& logit_grad) {
  GLAG_EXPECT(features.cols() == params.feature_dim(), "feature dimension mismatch");
  return classifier_grads(params, features, logit_grad, nullptr);
}

Gradients backward(const ModelParams& params, const BatchCache& cache, const Matrix& logit_grad) {
  Matrix upstream;
  Gradients g = classifier_grads(params, cache.features(), logit_grad, &upstream);
  const std::size_t n_layers = params.feature_layers.size();
  g.feature_layers.resize(n_layers);
  for (std::size_t li = n_layers; li-- > 0;) {
    const auto& layer = params.feature_layers[li];
    const Matrix& pre = cache.pre_activations[li];
    const Matrix& input = cache.activations[li];
    if (layer.activation == Activation::Relu)
      for (std::size_t j = 0; j < upstream.data().size(); ++j)
        if (pre.data()[j] <= 0.0) upstream.data()[j] = 0.0;

    auto& gl = g.feature_layers[li];
    gl.activation = layer.activation;
    gl.weight = Matrix(layer.weight.rows(), layer.weight.cols());
    gl.bias.assign(layer.weight.rows(), 0.0);
    Matrix next = li > 0 ? Matrix(input.rows(), input.cols()) : Matrix();
    for (std::size_t i = 0; i < input.rows(); ++i) {
      auto da = upstream.row(i);
      auto x = input.row(i);
      for (std::size_t r = 0; r < da.size(); ++r) {
        if (da[r] == 0.0) continue;
        gl.bias[r] += da[r];
        auto gw = gl.weight.row(r);
        for (std::size_t c = 0; c < x.size(); ++c) gw[c] += da[r] * x[c];
        if (li > 0) {
          auto w = layer.weight.row(r);
          auto dn = next.row(i);
          for (std::size_t c = 0; c < w.size(); ++c) dn[c] += da[r] * w[c];
        }
      }
    }
    upstream = std::move(next);
  }
  return g;
}

OptState make_opt_state(const ModelParams& params, double momentum, double weight_decay) {
  OptState s;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  for (const auto& layer : params.feature_layers)
    s.velocity.feature_layers.push_back({Matrix(layer.weight.rows(), layer.weight.cols()),
                                         Vector(layer.bias.size(), 0.0), layer.activation});
  s.velocity.classifier_weight = Matrix(params.classifier_weight.rows(), params.classifier_weight.cols());
  s.velocity.classifier_bias.assign(params.classifier_bias.size(), 0.0);
  s.velocity.scales.assign(params.scales.size(), 0.0);
  return s;
}

namespace {

void update(std::vector<double>& param, std::vector<double>& vel, const std::vector<double>& grad,
            double lr, double mu, double wd) {
  GLAG_EXPECT(param.size() == grad.size() && vel.size() == grad.size(),
              "gradient shape does not match parameter");
  for (double g : grad)
    if (!std::isfinite(g)) throw NumericError("non-finite gradient");
  for (std::size_t i = 0; i < param.size(); ++i) {
    vel[i] = mu * vel[i] + grad[i] + wd * param[i];
    param[i] -= lr * vel[i];
  }
}

}  // namespace

void sgd_step(ModelParams& params, OptState& opt, const Gradients& grads, double lr,
              const ParamMask& mask) {
  GLAG_EXPECT(lr >= 0.0, "learning rate must be non-negative");
  const double mu = opt.momentum;
  const double wd = opt.weight_decay;
  if (mask.feature_model && grads.has_feature_grads()) {
    GLAG_EXPECT(grads.feature_layers.size() == params.feature_layers.size(), "layer count mismatch");
    for (std::size_t i = 0; i < params.feature_layers.size(); ++i) {
      auto& p = params.feature_layers[i];
      auto& v = opt.velocity.feature_layers[i];
      update(p.weight.data(), v.weight.data(), grads.feature_layers[i].weight.data(), lr, mu, wd);
      update(p.bias, v.bias, grads.feature_layers[i].bias, lr, mu, wd);
    }
  }
  if (mask.classifier_weight)
    update(params.classifier_weight.data(), opt.velocity.classifier_weight.data(),
           grads.classifier_weight.data(), lr, mu, wd);
  if (mask.classifier_bias)
    update(params.classifier_bias, opt.velocity.classifier_bias, grads.classifier_bias, lr, mu, wd);
  if (mask.scales && params.scaling_enabled() && !grads.scales.empty()) {
    update(params.scales, opt.velocity.scales, grads.scales, lr, mu, wd);
    for (double& s : params.scales) s = std::max(s, 1e-6);
  }
}

double cosine_lr(double t, double t_max, double eta_max, double eta_min) {
  GLAG_EXPECT(t_max > 0.0, "cosine schedule needs t_max > 0");
  GLAG_EXPECT(t >= 0.0 && t <= t_max, "epoch outside [0, t_max]");
  return eta_min + 0.5 * (eta_max - eta_min) * (1.0 + std::cos(std::numbers::pi * t / t_max));
}

// Checkpoint container: "GLCK", u32 version, body, u64 FNV-1a of everything before it.
namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

struct Writer {
  std::vector<std::uint8_t> out;
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void tensor(std::size_t rows, std::size_t cols, const std::vector<double>& values) {
    u32(static_cast<std::uint32_t>(rows));
    u32(static_cast<std::uint32_t>(cols));
    for (double v : values) f64(v);
  }
};

struct Reader {
  std::span<const std::uint8_t> in;
  std::size_t pos = 0;
  void need(std::size_t n) {
    if (in.size() - pos < n) throw ParseError(pos, "truncated checkpoint");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(in[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(in[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  Matrix tensor() {
    const std::size_t at = pos;
    const std::uint64_t rows = u32();
    const std::uint64_t cols = u32();
    if (rows * cols * 8 > in.size() - pos) throw ParseError(at, "tensor shape exceeds file size");
    std::vector<double> v(rows * cols);
    for (double& x : v) x = f64();
    return Matrix(rows, cols, std::move(v));
  }
  Vector vec() {
    const std::size_t at = pos;
    Matrix m = tensor();
    if (m.rows() != 1 && !(m.rows() == 0 && m.cols() == 0)) throw ParseError(at, "expected a vector");
    return m.data();
  }
};

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  ckpt.params.validate();
  Writer w;
  for (char c : {'G', 'L', 'C', 'K'}) w.out.push_back(static_cast<std::uint8_t>(c));
  w.u32(kCheckpointVersion);
  const auto& p = ckpt.params;
  w.u32(static_cast<std::uint32_t>(p.feature_layers.size()));
  for (const auto& layer : p.feature_layers) {
    w.u32(layer.activation == Activation::Relu ? 1u : 0u);
    w.tensor(layer.weight.rows(), layer.weight.cols(), layer.weight.data());
    w.tensor(1, layer.bias.size(), layer.bias);
  }
  w.tensor(p.classifier_weight.rows(), p.classifier_weight.cols(), p.classifier_weight.data());
  w.tensor(1, p.classifier_bias.size(), p.classifier_bias);
  if (p.scales.empty())
    w.tensor(0, 0, {});
  else
    w.tensor(1, p.scales.size(), p.scales);
  w.u32(static_cast<std::uint32_t>(ckpt.train_counts.size()));
  for (int c : ckpt.train_counts) w.u32(static_cast<std::uint32_t>(c));
  w.u64(fnv1a(w.out));
  return std::move(w.out);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw ParseError(0, "checkpoint too short");
  if (std::memcmp(bytes.data(), "GLCK", 4) != 0) throw ParseError(0, "bad checkpoint magic");
  Reader r{bytes.first(bytes.size() - 8)};
  Reader tail{bytes, bytes.size() - 8};
  if (tail.u64() != fnv1a(bytes.first(bytes.size() - 8)))
    throw ParseError(bytes.size() - 8, "checkpoint checksum mismatch");
  r.pos = 4;
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw ParseError(4, "unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const std::uint32_t n_layers = r.u32();
  if (n_layers > 1024) throw ParseError(8, "implausible layer count");
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    DenseLayer layer;
    layer.activation = r.u32() ? Activation::Relu : Activation::None;
    layer.weight = r.tensor();
    layer.bias = r.vec();
    ck.params.feature_layers.push_back(std::move(layer));
  }
  ck.params.classifier_weight = r.tensor();
  ck.params.classifier_bias = r.vec();
  ck.params.scales = r.vec();
  const std::uint32_t n_counts = r.u32();
  r.need(std::size_t{n_counts} * 4);
  for (std::uint32_t i = 0; i < n_counts; ++i) ck.train_counts.push_back(static_cast<int>(r.u32()));
  if (r.pos != r.in.size()) throw ParseError(r.pos, "trailing bytes in checkpoint");
  try {
    ck.params.validate();
  } catch (const ContractViolation& e) {
    throw ParseError(0, std::string("inconsistent checkpoint: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace glag
