// Independent reference computations shared by the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "glag/model.hpp"
#include "glag/numerics.hpp"

namespace oracle {

using glag::Matrix;
using glag::Vector;

/// Central differences of a scalar function at x.
inline Vector numeric_gradient(const std::function<double(const Vector&)>& f, Vector x,
                               double h = 1e-5) {
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||); zero when both vanish.
inline double relative_error(const Vector& a, const Vector& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale < 1e-300 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

inline double log_sum_exp(const Vector& z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

/// -log softmax(z)_y, written out directly.
inline double ce(const Vector& z, int y) { return log_sum_exp(z) - z[static_cast<std::size_t>(y)]; }

/// T^2 * sum_k p_t(k) (log p_t(k) - log p_s(k)) at temperature T.
inline double kd(const Vector& student, const Vector& teacher, double t) {
  Vector s(student), q(teacher);
  for (double& v : s) v /= t;
  for (double& v : q) v /= t;
  const double ls = log_sum_exp(s), lq = log_sum_exp(q);
  double sum = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double lpt = q[k] - lq;
    sum += std::exp(lpt) * (lpt - (s[k] - ls));
  }
  return t * t * sum;
}

/// Pointers to every trainable scalar, in a fixed order.
inline std::vector<double*> parameter_slots(glag::ModelParams& p) {
  std::vector<double*> out;
  for (auto& layer : p.feature_layers) {
    for (double& v : layer.weight.data()) out.push_back(&v);
    for (double& v : layer.bias) out.push_back(&v);
  }
  for (double& v : p.classifier_weight.data()) out.push_back(&v);
  for (double& v : p.classifier_bias) out.push_back(&v);
  for (double& v : p.scales) out.push_back(&v);
  return out;
}

inline Vector flatten(const glag::Gradients& g) {
  Vector out;
  for (const auto& layer : g.feature_layers) {
    out.insert(out.end(), layer.weight.data().begin(), layer.weight.data().end());
    out.insert(out.end(), layer.bias.begin(), layer.bias.end());
  }
  out.insert(out.end(), g.classifier_weight.data().begin(), g.classifier_weight.data().end());
  out.insert(out.end(), g.classifier_bias.begin(), g.classifier_bias.end());
  out.insert(out.end(), g.scales.begin(), g.scales.end());
  return out;
}

/// Forward pass written independently of the library: ReLU hidden layers,
/// then logits_k = s_k * (W_k . f) + b_k.
inline Matrix mlp_logits(const glag::ModelParams& p, const Matrix& x) {
  Matrix out(x.rows(), p.classifier_weight.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    Vector h(x.row(r).begin(), x.row(r).end());
    for (const auto& layer : p.feature_layers) {
      Vector next(layer.weight.rows());
      for (std::size_t o = 0; o < next.size(); ++o) {
        double acc = layer.bias[o];
        for (std::size_t i = 0; i < h.size(); ++i) acc += layer.weight(o, i) * h[i];
        next[o] = std::max(acc, 0.0);
      }
      h = std::move(next);
    }
    for (std::size_t k = 0; k < out.cols(); ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i < h.size(); ++i) acc += p.classifier_weight(k, i) * h[i];
      out(r, k) = (p.scales.empty() ? 1.0 : p.scales[k]) * acc + p.classifier_bias[k];
    }
  }
  return out;
}

/// Smallest |pre-activation| over every hidden unit and sample; small values
/// put a ReLU kink inside the finite-difference stencil.
inline double min_abs_preactivation(const glag::ModelParams& p, const Matrix& x) {
  double best = INFINITY;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    Vector h(x.row(r).begin(), x.row(r).end());
    for (const auto& layer : p.feature_layers) {
      Vector next(layer.weight.rows());
      for (std::size_t o = 0; o < next.size(); ++o) {
        double acc = layer.bias[o];
        for (std::size_t i = 0; i < h.size(); ++i) acc += layer.weight(o, i) * h[i];
        best = std::min(best, std::abs(acc));
        next[o] = std::max(acc, 0.0);
      }
      h = std::move(next);
    }
  }
  return best;
}

/// Calibrated mean and covariance evaluated term by term from the defining
/// sums, without any of the library's helpers.
struct BruteCalibration {
  Vector mean;
  Matrix covariance;
};

inline BruteCalibration brute_calibrate(const Vector& x, const Matrix& own_cov,
                                        const std::vector<int>& support,
                                        const std::vector<Vector>& means,
                                        const std::vector<Matrix>& covs,
                                        const std::vector<int>& counts, double beta, double gamma) {
  const std::size_t d = x.size();
  std::vector<double> w;
  for (int j : support) {
    double dist2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) dist2 += (x[i] - means[j][i]) * (x[i] - means[j][i]);
    w.push_back(counts[j] / std::sqrt(dist2));
  }
  double wsum = 0.0;
  for (double v : w) wsum += v;

  BruteCalibration out{Vector(d, 0.0), Matrix(d, d, 0.0)};
  for (std::size_t i = 0; i < d; ++i) {
    double m = 0.0;
    for (std::size_t s = 0; s < support.size(); ++s) m += w[s] * means[support[s]][i];
    out.mean[i] = (1.0 - beta) * x[i] + beta * m / wsum;
  }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double c = 0.0;
      for (std::size_t s = 0; s < support.size(); ++s) c += w[s] * covs[support[s]](i, j);
      out.covariance(i, j) = (1.0 - beta) * (1.0 - beta) * own_cov(i, j) + beta * beta * c / wsum +
                             (i == j ? gamma : 0.0);
    }
  return out;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace oracle
