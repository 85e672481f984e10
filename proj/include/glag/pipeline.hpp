// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "glag/afg.hpp"
#include "glag/data.hpp"
#include "glag/losses.hpp"
#include "glag/model.hpp"

namespace glag {

/// Every knob of a run. Field names match the flat JSON config keys.
struct RunConfig {
  std::uint64_t seed = 1;

  // synthetic benchmark
  int classes = 20;
  int largest = 500;
  double imbalance = 100.0;
  int dim = 16;
  double separation = 2.0;
  int val_per_class = 100;
  int test_per_class = 100;
  int balanced_per_class = 500;

  // model and optimizer
  std::vector<std::size_t> hidden = {64, 32};
  int stage1_epochs = 60;
  int stage2_epochs = 40;
  int batch_size = 64;
  double lr = 0.05;
  double lr_min = 0.0;
  double stage2_lr_ratio = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;

  // stage-one loss
  LossKind loss = LossKind::GraLoss;
  double tau = 1.0;
  AlphaForm alpha_form = AlphaForm::Convex;
  double alpha_s = 1.0;
  double alpha_c = 2.0;

  // stage two
  bool afg = true;
  bool adaptive_beta = true;
  bool kd = true;
  double kd_temperature = 2.0;
  int k_support = 2;
  double lambda = 0.5;
  double gamma = 0.0;
  double beta_init = 0.4;
  double beta_step = 0.05;
  int gen_target = 0;   // 0 means max(counts)
  int gen_cap = -1;     // negative means uncapped
  bool stats_transform = true;
  bool warm_start = true;
  bool learnable_scaling = true;
  bool train_weights = false;
  bool balanced_sampling = false;
  /// "local": the KD weight follows the stage-two epoch counter; "global"
  /// continues the stage-one clock across both stages.
  std::string stage2_alpha_clock = "local";

  // evaluation
  int many_min = 100;
  int few_max = 20;
  int probe_epochs = 30;
  double probe_lr = 0.05;

  int workers = 1;
  std::string dump_generated;  // directory; empty disables the dump

  SynthSpec synth_spec() const;
  ScheduleSpec stage1_schedule() const;
  ScheduleSpec stage2_schedule() const;
  /// Throws ConfigError naming the offending field.
  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Plain decoupled baseline: CE stage one, stage two without AFG or KD.
RunConfig baseline_config(RunConfig base = {});

struct EvalMetrics {
  double overall = 0.0;
  std::optional<double> many;
  std::optional<double> medium;
  std::optional<double> few;
  Vector per_class;  // NaN where a class has no evaluation samples
  std::vector<int> per_class_count;

  std::optional<double> group(Group g) const;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double alpha = 0.0;
  double lr = 0.0;
  std::optional<double> val_accuracy;
  std::size_t generated = 0;
  Vector beta;  // stage two with AFG only
};

struct MetricsReport {
  std::string label;
  std::vector<EpochRecord> epochs;
  EvalMetrics test;
  std::optional<EvalMetrics> val;
  double wall_seconds = 0.0;
};

/// Argmax predictions (ties to the lowest class id) scored per class, per
/// group and overall. Empty groups are left unset.
EvalMetrics evaluate_logits(const Matrix& logits, std::span<const int> labels, int num_classes,
                            const GroupAssignment& groups);
EvalMetrics evaluate(const ModelParams& model, const EmbeddingDataset& test,
                     const GroupAssignment& groups);

struct StageResult {
  Checkpoint model;
  MetricsReport report;
};

StageResult train_stage1(const EmbeddingDataset& train, const EmbeddingDataset& val,
                         const EmbeddingDataset& test, const RunConfig& config);

/// Stage two never touches the feature layers of `m1`.
StageResult train_stage2(const Checkpoint& m1, const EmbeddingDataset& train,
                         const EmbeddingDataset& val, const EmbeddingDataset& test,
                         const RunConfig& config);

/// Freezes the feature model, trains a fresh classifier with plain CE on
/// `balanced_train`, and scores it on `test`. Groups follow `train_counts`
/// (the long-tailed counts the model was trained on) when given.
MetricsReport probe_features(const ModelParams& model, const EmbeddingDataset& balanced_train,
                             const EmbeddingDataset& test, const RunConfig& config,
                             std::span<const int> train_counts = {});

struct RunResult {
  StageResult stage1;
  std::optional<StageResult> stage2;
};

RunResult run_glag(const EmbeddingDataset& train, const EmbeddingDataset& val,
                   const EmbeddingDataset& test, const RunConfig& config, bool with_stage2 = true);

enum class AblationAxis { AlphaForm, LossChoice, Components };

const char* axis_name(AblationAxis a);
AblationAxis parse_axis(const std::string& name);

struct AblationCell {
  std::string name;
  RunConfig config;
  bool stage2 = false;
  bool probe = false;
  std::string decoupled;  // "cRT", "LWS", "AFG" or "" for stage-one rows
};

/// Cells of one ablation axis, in table order.
std::vector<AblationCell> ablation_cells(const RunConfig& base, AblationAxis axis);

struct AblationRow {
  AblationCell cell;
  MetricsReport stage1;
  std::optional<MetricsReport> stage2;
  std::optional<double> probe_accuracy;
  /// Test metrics of the last stage that ran.
  const EvalMetrics& final_metrics() const { return stage2 ? stage2->test : stage1.test; }
};

struct AblationTable {
  AblationAxis axis = AblationAxis::Components;
  std::uint64_t dataset_hash = 0;
  std::vector<AblationRow> rows;
};

/// Runs every cell on the same splits. Cells that share stage-one settings
/// share one stage-one model; `workers` bounds the thread pool.
AblationTable run_ablation(const RunConfig& base, AblationAxis axis, const EmbeddingDataset& train,
                           const EmbeddingDataset& val, const EmbeddingDataset& test,
                           const EmbeddingDataset& balanced, int workers = 1);

}  // namespace glag
