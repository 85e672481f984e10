// SPDX-License-Identifier: Apache-2.0
#include "glag/losses.hpp"

#include <algorithm>
#include <cmath>

#include "glag/error.hpp"

namespace glag {

const char* alpha_form_name(AlphaForm f) {
  switch (f) {
    case AlphaForm::Convex: return "convex";
    case AlphaForm::Linear: return "linear";
    case AlphaForm::Concave: return "concave";
  }
  return "?";
}

AlphaForm parse_alpha_form(const std::string& name) {
  if (name == "convex") return AlphaForm::Convex;
  if (name == "linear") return AlphaForm::Linear;
  if (name == "concave") return AlphaForm::Concave;
  throw ContractViolation("unknown alpha form: " + name);
}

double alpha_at(const ScheduleSpec& spec, double t) {
  GLAG_EXPECT(spec.t_max > 0.0, "schedule t_max must be positive");
  GLAG_EXPECT(spec.s > 0.0 && spec.c > 1.0, "schedule needs s > 0 and c > 1");
  GLAG_EXPECT(t >= 0.0 && t <= spec.t_max, "epoch outside [0, t_max]");
  const double ep = t / spec.t_max;
  switch (spec.form) {
    case AlphaForm::Convex:
      return spec.s * (std::pow(spec.c, ep) - 1.0);
    case AlphaForm::Linear:
      return spec.s * (spec.c - 1.0) * ep;
    case AlphaForm::Concave:
      return spec.s * (spec.c - 1.0) * std::log1p((spec.c - 1.0) * ep) / std::log1p(spec.c - 1.0);
  }
  return 0.0;
}

LossValue cross_entropy(std::span<const double> logits, int label) {
  GLAG_EXPECT(label >= 0 && static_cast<std::size_t>(label) < logits.size(), "label out of range");
  const Vector logp = log_softmax(logits);
  LossValue out;
  out.loss = -logp[static_cast<std::size_t>(label)];
  out.grad.resize(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) out.grad[k] = std::exp(logp[k]);
  out.grad[static_cast<std::size_t>(label)] -= 1.0;
  return out;
}

LossValue gra_loss(std::span<const double> logits, int label, std::span<const double> priors,
                   double alpha) {
  GLAG_EXPECT(priors.size() == logits.size(), "priors must cover every class");
  GLAG_EXPECT(alpha >= 0.0, "adjustment strength must be non-negative");
  for (double p : priors) GLAG_EXPECT(p > 0.0, "priors must be strictly positive");
  const bool uniform =
      std::all_of(priors.begin(), priors.end(), [&](double p) { return p == priors[0]; });
  if (alpha == 0.0 || uniform) return cross_entropy(logits, label);
  Vector adjusted(logits.begin(), logits.end());
  for (std::size_t k = 0; k < adjusted.size(); ++k) adjusted[k] += alpha * std::log(priors[k]);
  return cross_entropy(adjusted, label);
}

LossValue logit_adjusted_loss(std::span<const double> logits, int label,
                              std::span<const double> priors, double tau) {
  return gra_loss(logits, label, priors, tau);
}

LossValue kd_loss(std::span<const double> student, std::span<const double> teacher,
                  double temperature) {
  GLAG_EXPECT(student.size() == teacher.size(), "student and teacher lengths differ");
  GLAG_EXPECT(temperature > 0.0, "temperature must be positive");
  Vector s(student.begin(), student.end());
  Vector t(teacher.begin(), teacher.end());
  for (double& v : s) v /= temperature;
  for (double& v : t) v /= temperature;
  const Vector log_ps = log_softmax(s);
  const Vector log_pt = log_softmax(t);
  LossValue out;
  out.grad.resize(s.size());
  double kl = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double pt = std::exp(log_pt[k]);
    if (pt > 0.0) kl += pt * (log_pt[k] - log_ps[k]);
    out.grad[k] = temperature * (std::exp(log_ps[k]) - pt);
  }
  out.loss = temperature * temperature * std::max(kl, 0.0);
  return out;
}

BatchLoss stage2_loss(const Matrix& logits, std::span<const int> labels, const Matrix& teacher,
                      double alpha, std::span<const bool> head_mask, double temperature) {
  const std::size_t batch = logits.rows();
  GLAG_EXPECT(labels.size() == batch && head_mask.size() == batch, "batch sizes disagree");
  GLAG_EXPECT(batch > 0, "empty batch");
  BatchLoss out;
  out.grad = Matrix(batch, logits.cols());
  const double inv = 1.0 / static_cast<double>(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    LossValue ce = cross_entropy(logits.row(i), labels[i]);
    double loss = ce.loss;
    auto g = out.grad.row(i);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] = ce.grad[k];
    if (head_mask[i] && alpha != 0.0) {
      GLAG_EXPECT(teacher.rows() == batch && teacher.cols() == logits.cols(),
                  "teacher logits missing for a head sample");
      LossValue kd = kd_loss(logits.row(i), teacher.row(i), temperature);
      loss += alpha * kd.loss;
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += alpha * kd.grad[k];
    }
    out.loss += loss * inv;
    for (double& v : g) v *= inv;
  }
  return out;
}

const char* loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::CrossEntropy: return "ce";
    case LossKind::LogitAdjust: return "logit-adjust";
    case LossKind::GraLoss: return "graloss";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "ce") return LossKind::CrossEntropy;
  if (name == "logit-adjust") return LossKind::LogitAdjust;
  if (name == "graloss") return LossKind::GraLoss;
  throw ContractViolation("unknown loss: " + name);
}

BatchLoss batch_loss(LossKind kind, const Matrix& logits, std::span<const int> labels,
                     std::span<const double> priors, double adjust) {
  const std::size_t batch = logits.rows();
  GLAG_EXPECT(labels.size() == batch && batch > 0, "batch sizes disagree");
  BatchLoss out;
  out.grad = Matrix(batch, logits.cols());
  const double inv = 1.0 / static_cast<double>(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    LossValue lv = kind == LossKind::CrossEntropy ? cross_entropy(logits.row(i), labels[i])
                                                  : gra_loss(logits.row(i), labels[i], priors, adjust);
    out.loss += lv.loss * inv;
    auto g = out.grad.row(i);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] = lv.grad[k] * inv;
  }
  return out;
}

}  // namespace glag
