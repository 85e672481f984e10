// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "glag/numerics.hpp"

namespace glag {

enum class Activation { None, Relu };

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::Relu;

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// MLP feature model followed by a linear classifier. When `scales` is
/// non-empty the logits are scales .* (W f) + b (learnable weight scaling).
struct ModelParams {
  std::vector<DenseLayer> feature_layers;
  Matrix classifier_weight;  // L x F
  Vector classifier_bias;    // L
  Vector scales;             // empty, or L strictly positive factors

  std::size_t input_dim() const;
  std::size_t feature_dim() const;
  std::size_t num_classes() const { return classifier_weight.rows(); }
  bool scaling_enabled() const { return !scales.empty(); }
  /// Throws ContractViolation when layer shapes do not chain.
  void validate() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases. Every
/// hidden layer uses ReLU, including the last one, so features are >= 0.
ModelParams init_model(std::size_t input_dim, std::span<const std::size_t> hidden,
                       std::size_t num_classes, Rng& rng);
/// Fresh classifier over the existing feature width; the feature model is kept.
void reset_classifier(ModelParams& params, Rng& rng);
void enable_scaling(ModelParams& params);

struct ForwardResult {
  Vector feature;
  Vector logits;
};

Vector extract_feature(const ModelParams& params, std::span<const double> x);
Vector classifier_logits(const ModelParams& params, std::span<const double> feature);
ForwardResult forward(const ModelParams& params, std::span<const double> x);

/// Features for every row of `inputs`.
Matrix extract_features(const ModelParams& params, const Matrix& inputs);
Matrix classifier_logits(const ModelParams& params, const Matrix& features);

/// Same shapes as ModelParams. Feature-layer gradients are empty when only
/// the classifier was differentiated.
struct Gradients {
  std::vector<DenseLayer> feature_layers;
  Matrix classifier_weight;
  Vector classifier_bias;
  Vector scales;

  bool has_feature_grads() const { return !feature_layers.empty(); }
};

/// Intermediate activations of a batch forward pass.
struct BatchCache {
  std::vector<Matrix> pre_activations;  // per feature layer, B x width
  std::vector<Matrix> activations;      // per feature layer, B x width; index 0 is the input
  Matrix logits;                        // B x L
  const Matrix& features() const { return activations.back(); }
};

BatchCache forward_batch(const ModelParams& params, const Matrix& inputs);

/// Gradients of a scalar loss whose derivative w.r.t. the batch logits is
/// `logit_grad` (B x L). The loss is expected to already include any 1/B.
Gradients backward(const ModelParams& params, const BatchCache& cache, const Matrix& logit_grad);

/// Classifier-only gradients for a batch of (frozen) features.
Gradients classifier_backward(const ModelParams& params, const Matrix& features,
                              const Matrix& logit_grad);

struct OptState {
  Gradients velocity;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

OptState make_opt_state(const ModelParams& params, double momentum, double weight_decay);

struct ParamMask {
  bool feature_model = true;
  bool classifier_weight = true;
  bool classifier_bias = true;
  bool scales = true;
};

/// v <- mu v + g + wd p; p <- p - lr v, for every parameter group in `mask`
/// that has a gradient. Throws NumericError on a non-finite gradient.
void sgd_step(ModelParams& params, OptState& opt, const Gradients& grads, double lr,
              const ParamMask& mask = {});

/// eta_min + (eta_max - eta_min) (1 + cos(pi t / t_max)) / 2
double cosine_lr(double t, double t_max, double eta_max, double eta_min);

/// Model plus the training-class counts it was fit on (needed for group metrics).
struct Checkpoint {
  ModelParams params;
  std::vector<int> train_counts;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace glag
