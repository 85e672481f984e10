// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace glag {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  Matrix transpose() const;
  bool all_finite() const noexcept;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
/// y = A x
Vector matvec(const Matrix& a, std::span<const double> x);
double frobenius_norm(const Matrix& m);
/// ||a - b||_F / ||b||_F, or the absolute norm when b is zero.
double relative_frobenius_error(const Matrix& a, const Matrix& b);
double euclidean_distance(std::span<const double> a, std::span<const double> b);

/// xoshiro256** seeded through splitmix64. The stream depends only on the
/// seed, so results are identical across platforms and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  /// Independent stream for a (seed, purpose...) tuple.
  static Rng derive(std::uint64_t seed, std::uint64_t stream_a, std::uint64_t stream_b = 0);

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) noexcept;
  /// Standard normal via the polar Box-Muller method.
  double normal() noexcept;

  template <class T>
  void shuffle(std::vector<T>& v) noexcept {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Numerically stable softmax (max is subtracted before exponentiation).
Vector softmax(std::span<const double> logits);
/// log of the softmax, computed with log-sum-exp.
Vector log_softmax(std::span<const double> logits);

struct CholeskyResult {
  Matrix lower;
  /// Diagonal jitter that made the factorization succeed (0 if none was needed).
  double jitter = 0.0;
};

/// Cholesky factor of a symmetric PSD matrix. When plain factorization fails
/// the diagonal is inflated by 1e-10, 1e-8, 1e-6, 1e-4 in turn; throws
/// NotPsdError if all of them fail.
CholeskyResult cholesky_psd(const Matrix& m);

/// mean + L u with u drawn from independent standard normals.
Vector gaussian_sample(std::span<const double> mean, const Matrix& chol_factor, Rng& rng);

}  // namespace glag
