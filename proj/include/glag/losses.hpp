// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "glag/numerics.hpp"

namespace glag {

enum class AlphaForm { Convex, Linear, Concave };

const char* alpha_form_name(AlphaForm f);
AlphaForm parse_alpha_form(const std::string& name);

/// Gradual adjustment schedule. Every form starts at 0 and ends at s (c - 1).
struct ScheduleSpec {
  double s = 1.0;
  double c = 2.0;
  AlphaForm form = AlphaForm::Convex;
  double t_max = 1.0;
};

/// convex:  s (c^(t/T) - 1)
/// linear:  s (c - 1) t/T
/// concave: s (c - 1) log(1 + (c - 1) t/T) / log(c)
double alpha_at(const ScheduleSpec& spec, double t);

struct LossValue {
  double loss = 0.0;
  Vector grad;  // d loss / d logits
};

LossValue cross_entropy(std::span<const double> logits, int label);

/// Cross-entropy on z + alpha log p. Uniform priors or alpha == 0 take the
/// plain cross-entropy path, so the result is bitwise identical to it.
LossValue gra_loss(std::span<const double> logits, int label, std::span<const double> priors,
                   double alpha);

/// Fixed-tau logit adjustment; same contract as gra_loss.
LossValue logit_adjusted_loss(std::span<const double> logits, int label,
                              std::span<const double> priors, double tau);

/// T^2 KL(softmax(teacher/T) || softmax(student/T)); gradient is w.r.t. the student.
LossValue kd_loss(std::span<const double> student, std::span<const double> teacher,
                  double temperature);

struct BatchLoss {
  double loss = 0.0;  // batch mean
  Matrix grad;        // B x L, already divided by B
};

/// Mean over the batch of CE(z_i, y_i) + alpha [head_i] KD(z_i, teacher_i).
/// Rows of `teacher` are read only where head_mask is set.
BatchLoss stage2_loss(const Matrix& logits, std::span<const int> labels, const Matrix& teacher,
                      double alpha, std::span<const bool> head_mask, double temperature);

enum class LossKind { CrossEntropy, LogitAdjust, GraLoss };

const char* loss_kind_name(LossKind k);
LossKind parse_loss_kind(const std::string& name);

/// Stage-one batch loss. `adjust` is tau for LogitAdjust, alpha for GraLoss,
/// ignored for CrossEntropy.
BatchLoss batch_loss(LossKind kind, const Matrix& logits, std::span<const int> labels,
                     std::span<const double> priors, double adjust);

}  // namespace glag
