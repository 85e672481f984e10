// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include "glag/data.hpp"
#include "glag/numerics.hpp"

namespace glag {

/// Entrywise x^lambda, or log(x + 1e-6) when lambda == 0. Entries must be >= 0.
Vector tukey_transform(std::span<const double> x, double lambda);
/// Inverse of tukey_transform, mapping generated samples back to feature space.
Vector inverse_tukey(std::span<const double> y, double lambda);
Matrix tukey_transform(const Matrix& x, double lambda);

/// Per-class mean and unbiased covariance.
struct ClassStats {
  std::vector<Vector> means;
  std::vector<Matrix> covariances;
  std::vector<int> counts;
  /// Set for single-sample classes, whose covariance is the pooled diagonal.
  std::vector<bool> fallback;

  std::size_t num_classes() const { return means.size(); }
};

ClassStats estimate_class_stats(const Matrix& features, std::span<const int> labels, int num_classes);

/// The min(K, #eligible) classes nearest to `x` among those with strictly
/// more samples than `own_class`, nearest first; ties go to the smaller id.
std::vector<int> support_set(std::span<const double> x, int own_class, const ClassStats& stats,
                             int k);

struct CalibratedDistribution {
  Vector mean;
  Matrix covariance;  // symmetrized, before any factorization jitter
  Matrix factor;      // lower Cholesky factor of covariance (+ jitter)
  double jitter = 0.0;
  std::int64_t source_id = -1;
  std::vector<int> support;
};

/// Weighted calibration toward the support classes with w_j = N_j / d_j:
///   mean = (1-beta) x + beta sum(w_j mu_j) / sum(w_j)
///   cov  = (1-beta)^2 own_cov + beta^2 sum(w_j Sigma_j) / sum(w_j) + gamma I
CalibratedDistribution calibrate(std::span<const double> x, const Matrix& own_cov,
                                 std::span<const int> support, const ClassStats& stats,
                                 double beta, double gamma);

struct GenerationPlan {
  std::vector<int> generate;  // per class
  int target = 0;
  std::size_t total() const;
};

inline constexpr int kNoCap = std::numeric_limits<int>::max();

/// generate_k = min(target - N_k, cap) for classes below target, else 0.
GenerationPlan build_generation_plan(std::span<const int> counts, int target, int cap = kNoCap);

struct BetaState {
  Vector beta;           // per class; only entries flagged in `tail` adapt
  std::vector<bool> tail;
  double step = 0.05;
  Vector last_accuracy;  // negative until the first validation pass
};

BetaState init_beta(const GenerationPlan& plan, double initial, double step);

/// Raises beta_k by `step` when a tail class's accuracy improved, lowers it
/// when it dropped, and clamps to [0, 1].
BetaState update_beta(const BetaState& state, std::span<const double> accuracy);

struct GeneratedSample {
  std::int64_t source_id;  // row of the real sample that seeded it
  int label;
  std::vector<int> support;
  double beta;
};

struct GeneratedSet {
  Matrix features;  // in transformed space, clamped at 0
  std::vector<GeneratedSample> records;
};

struct AfgSettings {
  int k_support = 2;
  double gamma = 0.0;
};

/// Round-robin over the real (transformed) samples of class `k`: each one is
/// calibrated with beta_k and contributes Gaussian draws until `count` samples
/// exist. `source_rows` are the row ids the samples came from (for provenance).
GeneratedSet generate_for_class(int k, int count, const Matrix& class_features,
                                std::span<const std::int64_t> source_rows, const ClassStats& stats,
                                double beta, const AfgSettings& settings, Rng& rng);

/// Writes generated features as an embedding file plus a `<path>.txt`
/// sidecar listing sample id, source row, class, support set and beta.
void dump_generated(std::span<const GeneratedSample> records, const Matrix& features,
                    int num_classes, const std::filesystem::path& emb_path);

}  // namespace glag
