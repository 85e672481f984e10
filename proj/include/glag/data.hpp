// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "glag/numerics.hpp"

namespace glag {

/// Labeled feature vectors. Features are N x D, labels lie in [0, num_classes).
struct EmbeddingDataset {
  Matrix features;
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }
  std::vector<int> class_counts() const;
  /// Throws ContractViolation if shapes disagree or a label is out of range.
  void validate() const;

  friend bool operator==(const EmbeddingDataset&, const EmbeddingDataset&) = default;
};

/// Relabels classes so that counts are non-increasing in class index. Ties
/// keep their original relative order. Returns the old-to-new label map.
std::vector<int> canonicalize(EmbeddingDataset& ds);

struct LongTailSpec {
  int num_classes = 20;
  int largest = 500;
  double imbalance = 100.0;
};

/// N_k = round(N1 * IM^(-k/(L-1))).
std::vector<int> make_longtail_counts(const LongTailSpec& spec);

/// p_k = N_k / N.
Vector class_priors(std::span<const int> counts);

enum class Group { Many, Medium, Few };

const char* group_name(Group g);

struct GroupAssignment {
  std::vector<Group> tags;
  int many_min = 100;
  int few_max = 20;
};

/// Many iff count > many_min, Few iff count < few_max, Medium otherwise.
GroupAssignment assign_groups(std::span<const int> counts, int many_min = 100, int few_max = 20);

struct SynthSpec {
  LongTailSpec longtail;
  int dim = 16;
  double separation = 2.0;
  int val_per_class = 100;
  int test_per_class = 100;
  /// Size of the balanced split used by the feature probe.
  int balanced_per_class = 500;
};

/// Parameters the mixture was drawn from, kept for statistical oracles.
struct GroundTruth {
  std::vector<Vector> means;
  std::vector<Vector> variances;  // diagonal covariances
};

struct SynthData {
  EmbeddingDataset train;
  EmbeddingDataset val;
  EmbeddingDataset test;
  EmbeddingDataset balanced;
  GroundTruth truth;
};

/// Long-tailed Gaussian mixture in the positive orthant. Feature values are
/// rounded to float so files round-trip exactly.
SynthData synth_gaussian_mixture(const SynthSpec& spec, std::uint64_t seed);

/// Draws `per_class[k]` samples for every class of a known mixture.
EmbeddingDataset sample_mixture(const GroundTruth& truth, std::span<const int> per_class, Rng& rng);

/// Binary layout: "EMB1", u32 N, u32 D, u32 L, then N x (u32 label, D x f32), little-endian.
void save_embeddings(const EmbeddingDataset& ds, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_embeddings(const EmbeddingDataset& ds);
/// Accepts the binary format or CSV with header `label,f0,...,f{D-1}`.
EmbeddingDataset load_embeddings(const std::filesystem::path& path);
EmbeddingDataset decode_embeddings(std::span<const std::uint8_t> bytes);
/// num_classes is max(label) + 1 unless a positive value is given.
EmbeddingDataset parse_embeddings_csv(const std::string& text, int num_classes = 0);

/// FNV-1a over the binary encoding; identifies a split in ablation tables.
std::uint64_t dataset_hash(const EmbeddingDataset& ds);

}  // namespace glag
