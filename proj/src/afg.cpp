// SPDX-License-Identifier: Apache-2.0
#include "glag/afg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

#include "glag/error.hpp"

namespace glag {

namespace {
constexpr double kLogEps = 1e-6;
constexpr double kMinDistance = 1e-9;
}  // namespace

Vector tukey_transform(std::span<const double> x, double lambda) {
  GLAG_EXPECT(lambda >= 0.0, "tukey lambda must be >= 0");
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] >= 0.0))
      throw ContractViolation("tukey transform needs non-negative input; value at index " +
                              std::to_string(i) + " is " + std::to_string(x[i]));
    out[i] = lambda > 0.0 ? std::pow(x[i], lambda) : std::log(x[i] + kLogEps);
  }
  return out;
}

Vector inverse_tukey(std::span<const double> y, double lambda) {
  GLAG_EXPECT(lambda >= 0.0, "tukey lambda must be >= 0");
  Vector out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (lambda > 0.0)
      out[i] = y[i] > 0.0 ? std::pow(y[i], 1.0 / lambda) : 0.0;
    else
      out[i] = std::max(0.0, std::exp(y[i]) - kLogEps);
  }
  return out;
}

Matrix tukey_transform(const Matrix& x, double lambda) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const Vector r = tukey_transform(x.row(i), lambda);
    std::copy(r.begin(), r.end(), out.row(i).begin());
  }
  return out;
}

ClassStats estimate_class_stats(const Matrix& features, std::span<const int> labels, int num_classes) {
  GLAG_EXPECT(features.rows() == labels.size(), "feature rows must match labels");
  const std::size_t L = static_cast<std::size_t>(num_classes);
  const std::size_t D = features.cols();
  ClassStats st;
  st.means.assign(L, Vector(D, 0.0));
  st.covariances.assign(L, Matrix(D, D));
  st.counts.assign(L, 0);
  st.fallback.assign(L, false);

  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto k = static_cast<std::size_t>(labels[i]);
    GLAG_EXPECT(k < L, "label out of range");
    ++st.counts[k];
    auto r = features.row(i);
    for (std::size_t d = 0; d < D; ++d) st.means[k][d] += r[d];
  }
  for (std::size_t k = 0; k < L; ++k) {
    GLAG_EXPECT(st.counts[k] > 0, "class " + std::to_string(k) + " has no samples");
    for (double& v : st.means[k]) v /= st.counts[k];
  }

  Vector centered(D);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto k = static_cast<std::size_t>(labels[i]);
    if (st.counts[k] < 2) continue;
    auto r = features.row(i);
    for (std::size_t d = 0; d < D; ++d) centered[d] = r[d] - st.means[k][d];
    Matrix& cov = st.covariances[k];
    for (std::size_t a = 0; a < D; ++a) {
      auto cr = cov.row(a);
      for (std::size_t b = a; b < D; ++b) cr[b] += centered[a] * centered[b];
    }
  }

  Vector pooled(D, 0.0);
  int pooled_classes = 0;
  for (std::size_t k = 0; k < L; ++k) {
    if (st.counts[k] < 2) continue;
    Matrix& cov = st.covariances[k];
    const double norm = 1.0 / (st.counts[k] - 1);
    for (std::size_t a = 0; a < D; ++a)
      for (std::size_t b = a; b < D; ++b) {
        cov(a, b) *= norm;
        cov(b, a) = cov(a, b);
      }
    for (std::size_t d = 0; d < D; ++d) pooled[d] += cov(d, d);
    ++pooled_classes;
  }
  if (pooled_classes > 0)
    for (double& v : pooled) v /= pooled_classes;
  for (std::size_t k = 0; k < L; ++k) {
    if (st.counts[k] >= 2) continue;
    st.fallback[k] = true;
    for (std::size_t d = 0; d < D; ++d) st.covariances[k](d, d) = pooled[d];
  }
  return st;
}

std::vector<int> support_set(std::span<const double> x, int own_class, const ClassStats& stats, int k) {
  GLAG_EXPECT(k >= 1, "support size must be >= 1");
  GLAG_EXPECT(own_class >= 0 && static_cast<std::size_t>(own_class) < stats.num_classes(),
              "class out of range");
  const int own_count = stats.counts[static_cast<std::size_t>(own_class)];
  std::vector<std::pair<double, int>> candidates;
  for (std::size_t j = 0; j < stats.num_classes(); ++j)
    if (stats.counts[j] > own_count)
      candidates.emplace_back(euclidean_distance(x, stats.means[j]), static_cast<int>(j));
  const std::size_t take = std::min(candidates.size(), static_cast<std::size_t>(k));
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                    candidates.end());
  std::vector<int> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(candidates[i].second);
  return out;
}

CalibratedDistribution calibrate(std::span<const double> x, const Matrix& own_cov,
                                 std::span<const int> support, const ClassStats& stats,
                                 double beta, double gamma) {
  GLAG_EXPECT(!support.empty(), "calibration needs a non-empty support set");
  GLAG_EXPECT(beta >= 0.0 && beta <= 1.0, "beta must lie in [0, 1]");
  GLAG_EXPECT(gamma >= 0.0, "gamma must be >= 0");
  const std::size_t D = x.size();
  GLAG_EXPECT(own_cov.rows() == D && own_cov.cols() == D, "own covariance shape mismatch");

  Vector support_mean(D, 0.0);
  Matrix support_cov(D, D);
  double weight_sum = 0.0;
  for (int j : support) {
    const auto ju = static_cast<std::size_t>(j);
    GLAG_EXPECT(ju < stats.num_classes(), "support class out of range");
    double d = euclidean_distance(x, stats.means[ju]);
    if (d <= 0.0) {
      log_warning("sample coincides with the mean of support class " + std::to_string(j) +
                  "; using distance 1e-9");
      d = kMinDistance;
    }
    const double w = stats.counts[ju] / d;
    weight_sum += w;
    for (std::size_t a = 0; a < D; ++a) support_mean[a] += w * stats.means[ju][a];
    const auto& cov = stats.covariances[ju].data();
    auto& acc = support_cov.data();
    for (std::size_t e = 0; e < acc.size(); ++e) acc[e] += w * cov[e];
  }

  CalibratedDistribution out;
  out.support.assign(support.begin(), support.end());
  out.mean.resize(D);
  for (std::size_t a = 0; a < D; ++a)
    out.mean[a] = (1.0 - beta) * x[a] + beta * (support_mean[a] / weight_sum);

  const double own_w = (1.0 - beta) * (1.0 - beta);
  const double sup_w = beta * beta / weight_sum;
  out.covariance = Matrix(D, D);
  for (std::size_t a = 0; a < D; ++a)
    for (std::size_t b = 0; b < D; ++b)
      out.covariance(a, b) = own_w * own_cov(a, b) + sup_w * support_cov(a, b);
  for (std::size_t a = 0; a < D; ++a) {
    for (std::size_t b = a + 1; b < D; ++b) {
      const double sym = 0.5 * (out.covariance(a, b) + out.covariance(b, a));
      out.covariance(a, b) = sym;
      out.covariance(b, a) = sym;
    }
    out.covariance(a, a) += gamma;
  }
  auto chol = cholesky_psd(out.covariance);
  out.factor = std::move(chol.lower);
  out.jitter = chol.jitter;
  return out;
}

std::size_t GenerationPlan::total() const {
  return std::accumulate(generate.begin(), generate.end(), std::size_t{0});
}

GenerationPlan build_generation_plan(std::span<const int> counts, int target, int cap) {
  GLAG_EXPECT(cap >= 0, "generation cap must be >= 0");
  GenerationPlan plan;
  plan.target = target;
  plan.generate.reserve(counts.size());
  for (int n : counts) plan.generate.push_back(n < target ? std::min(target - n, cap) : 0);
  return plan;
}

BetaState init_beta(const GenerationPlan& plan, double initial, double step) {
  GLAG_EXPECT(initial >= 0.0 && initial <= 1.0, "initial beta must lie in [0, 1]");
  GLAG_EXPECT(step >= 0.0, "beta step must be >= 0");
  BetaState s;
  s.step = step;
  s.beta.assign(plan.generate.size(), initial);
  s.tail.reserve(plan.generate.size());
  for (int g : plan.generate) s.tail.push_back(g > 0);
  s.last_accuracy.assign(plan.generate.size(), -1.0);
  return s;
}

BetaState update_beta(const BetaState& state, std::span<const double> accuracy) {
  GLAG_EXPECT(accuracy.size() == state.beta.size(), "accuracy must cover every class");
  BetaState next = state;
  for (std::size_t k = 0; k < accuracy.size(); ++k) {
    GLAG_EXPECT(accuracy[k] >= 0.0 && accuracy[k] <= 1.0, "accuracy must lie in [0, 1]");
    const double prev = state.last_accuracy[k];
    if (state.tail[k] && prev >= 0.0) {
      if (accuracy[k] > prev)
        next.beta[k] = std::min(1.0, state.beta[k] + state.step);
      else if (accuracy[k] < prev)
        next.beta[k] = std::max(0.0, state.beta[k] - state.step);
    }
    next.last_accuracy[k] = accuracy[k];
  }
  return next;
}

GeneratedSet generate_for_class(int k, int count, const Matrix& class_features,
                                std::span<const std::int64_t> source_rows, const ClassStats& stats,
                                double beta, const AfgSettings& settings, Rng& rng) {
  GLAG_EXPECT(source_rows.size() == class_features.rows(), "one source id per real sample");
  GeneratedSet out;
  const std::size_t D = class_features.cols();
  out.features = Matrix(0, D);
  if (count <= 0 || class_features.rows() == 0) return out;

  const Matrix& own_cov = stats.covariances[static_cast<std::size_t>(k)];
  const std::size_t sources = std::min<std::size_t>(class_features.rows(), static_cast<std::size_t>(count));
  std::vector<CalibratedDistribution> dists;
  dists.reserve(sources);
  for (std::size_t i = 0; i < sources; ++i) {
    auto x = class_features.row(i);
    auto support = support_set(x, k, stats, settings.k_support);
    if (support.empty()) continue;
    dists.push_back(calibrate(x, own_cov, support, stats, beta, settings.gamma));
    dists.back().source_id = source_rows[i];
  }
  if (dists.empty()) {
    log_warning("class " + std::to_string(k) + " has no larger class to borrow from; generated 0 samples");
    return out;
  }

  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(count) * D);
  out.records.reserve(static_cast<std::size_t>(count));
  for (int n = 0; n < count; ++n) {
    const auto& dist = dists[static_cast<std::size_t>(n) % dists.size()];
    Vector s = gaussian_sample(dist.mean, dist.factor, rng);
    for (double v : s) data.push_back(std::max(0.0, v));
    out.records.push_back({dist.source_id, k, dist.support, beta});
  }
  out.features = Matrix(static_cast<std::size_t>(count), D, std::move(data));
  return out;
}

void dump_generated(std::span<const GeneratedSample> records, const Matrix& features,
                    int num_classes, const std::filesystem::path& emb_path) {
  GLAG_EXPECT(records.size() == features.rows(), "one record per generated row");
  EmbeddingDataset ds;
  ds.num_classes = num_classes;
  ds.features = features;
  for (const auto& r : records) ds.labels.push_back(r.label);
  save_embeddings(ds, emb_path);

  std::ofstream side(emb_path.string() + ".txt", std::ios::trunc);
  if (!side) throw IoError("cannot write sidecar for " + emb_path.string());
  side << "sample_id\tsource_row\tclass\tsupport\tbeta\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    side << i << '\t' << r.source_id << '\t' << r.label << '\t';
    for (std::size_t j = 0; j < r.support.size(); ++j) side << (j ? "," : "") << r.support[j];
    side << '\t' << r.beta << '\n';
  }
}

}  // namespace glag
