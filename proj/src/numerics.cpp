// SPDX-License-Identifier: Apache-2.0
#include "glag/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <string>

#include "glag/error.hpp"

namespace glag {

namespace {

bool g_warnings_enabled = true;
std::uint64_t g_warning_count = 0;

std::uint64_t splitmix64(std::uint64_t& x) noexcept {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
  return (x << k) | (x >> (64 - k));
}

}  // namespace

void log_warning(const std::string& message) {
  ++g_warning_count;
  if (g_warnings_enabled) std::cerr << "warning: " << message << '\n';
}

void set_warnings_enabled(bool enabled) { g_warnings_enabled = enabled; }

std::uint64_t warning_count() { return g_warning_count; }

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  GLAG_EXPECT(data_.size() == rows * cols, "matrix entry count must equal rows * cols");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  GLAG_EXPECT(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

Vector matvec(const Matrix& a, std::span<const double> x) {
  GLAG_EXPECT(a.cols() == x.size(), "matvec: dimension mismatch");
  Vector y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) acc += r[j] * x[j];
    y[i] = acc;
  }
  return y;
}

double frobenius_norm(const Matrix& m) {
  double acc = 0.0;
  for (double v : m.data()) acc += v * v;
  return std::sqrt(acc);
}

double relative_frobenius_error(const Matrix& a, const Matrix& b) {
  GLAG_EXPECT(a.rows() == b.rows() && a.cols() == b.cols(), "shape mismatch");
  double diff = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    diff += d * d;
  }
  const double ref = frobenius_norm(b);
  return ref > 0.0 ? std::sqrt(diff) / ref : std::sqrt(diff);
}

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  GLAG_EXPECT(a.size() == b.size(), "distance: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

Rng::Rng(std::uint64_t seed) {
  std::uint64_t x = seed;
  for (auto& s : s_) s = splitmix64(x);
}

Rng Rng::derive(std::uint64_t seed, std::uint64_t stream_a, std::uint64_t stream_b) {
  std::uint64_t x = seed;
  std::uint64_t h = splitmix64(x);
  x = h ^ (stream_a * 0xD6E8FEB86659FD93ull);
  h = splitmix64(x);
  x = h ^ (stream_b * 0xA0761D6478BD642Full);
  return Rng(splitmix64(x));
}

std::uint64_t Rng::next_u64() noexcept {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) noexcept {
  // rejection sampling keeps the result unbiased
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

double Rng::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  has_spare_ = true;
  return u * f;
}

Vector softmax(std::span<const double> logits) {
  GLAG_EXPECT(!logits.empty(), "softmax of an empty vector");
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vector p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

Vector log_softmax(std::span<const double> logits) {
  GLAG_EXPECT(!logits.empty(), "log_softmax of an empty vector");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - mx);
  const double lse = mx + std::log(total);
  Vector out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

namespace {

// Returns false when a pivot is negative beyond rounding or a zero pivot has a
// non-zero column below it.
bool try_cholesky(const Matrix& m, double jitter, Matrix& out) {
  const std::size_t n = m.rows();
  out = Matrix(n, n);
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(m(i, i)));
  const double tol = 1e-13 * std::max(scale, 1.0);

  for (std::size_t j = 0; j < n; ++j) {
    double d = m(j, j) + jitter;
    for (std::size_t k = 0; k < j; ++k) d -= out(j, k) * out(j, k);
    if (d < -tol) return false;
    if (d <= tol) {
      // zero pivot: acceptable only if the remaining column is already explained
      for (std::size_t i = j + 1; i < n; ++i) {
        double r = m(i, j);
        for (std::size_t k = 0; k < j; ++k) r -= out(i, k) * out(j, k);
        if (std::abs(r) > tol) return false;
      }
      continue;
    }
    const double ljj = std::sqrt(d);
    out(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double r = m(i, j);
      for (std::size_t k = 0; k < j; ++k) r -= out(i, k) * out(j, k);
      out(i, j) = r / ljj;
    }
  }
  return out.all_finite();
}

}  // namespace

CholeskyResult cholesky_psd(const Matrix& m) {
  GLAG_EXPECT(m.rows() == m.cols(), "cholesky: matrix must be square");
  GLAG_EXPECT(m.all_finite(), "cholesky: matrix has non-finite entries");
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      GLAG_EXPECT(std::abs(m(i, j) - m(j, i)) <= 1e-9 * std::max(1.0, std::abs(m(i, j))),
                  "cholesky: matrix is not symmetric");

  CholeskyResult result;
  if (try_cholesky(m, 0.0, result.lower)) return result;
  for (double eps : {1e-10, 1e-8, 1e-6, 1e-4}) {
    if (try_cholesky(m, eps, result.lower)) {
      result.jitter = eps;
      return result;
    }
  }
  throw NotPsdError("cholesky: matrix is not positive semidefinite even with jitter 1e-4");
}

Vector gaussian_sample(std::span<const double> mean, const Matrix& chol_factor, Rng& rng) {
  const std::size_t n = mean.size();
  GLAG_EXPECT(chol_factor.rows() == n && chol_factor.cols() == n,
              "gaussian_sample: factor shape does not match mean");
  Vector u(n);
  for (double& v : u) v = rng.normal();
  Vector out(mean.begin(), mean.end());
  for (std::size_t i = 0; i < n; ++i) {
    auto r = chol_factor.row(i);
    double acc = 0.0;
    for (std::size_t k = 0; k <= i; ++k) acc += r[k] * u[k];
    out[i] += acc;
  }
  return out;
}

}  // namespace glag
