// SPDX-License-Identifier: Apache-2.0
#include "glag/pipeline.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <thread>
#include <tuple>

#include "glag/error.hpp"

namespace glag {

namespace {

// Rng stream ids; every random decision of a run derives from (seed, stream).
enum Stream : std::uint64_t {
  kInit = 101,
  kShuffle1,
  kClassifier,
  kShuffle2,
  kGenerate,
  kProbeInit,
  kProbeShuffle,
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = m.row(idx[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

// Every class drawn up to the size of the largest one, with replacement.
std::vector<std::size_t> class_balanced_indices(std::span<const int> labels, int num_classes, Rng& rng) {
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  std::size_t per_class = 0;
  for (const auto& c : by_class) per_class = std::max(per_class, c.size());
  std::vector<std::size_t> out;
  out.reserve(per_class * by_class.size());
  for (const auto& c : by_class) {
    if (c.empty()) continue;
    out.insert(out.end(), c.begin(), c.end());
    for (std::size_t i = c.size(); i < per_class; ++i) out.push_back(c[rng.below(c.size())]);
  }
  rng.shuffle(out);
  return out;
}

void check_dataset(const EmbeddingDataset& ds, const char* name, std::size_t dim, int classes) {
  try {
    ds.validate();
  } catch (const ContractViolation& e) {
    throw ContractViolation(std::string(name) + ": " + e.what());
  }
  GLAG_EXPECT(ds.size() > 0, std::string(name) + " split is empty");
  if (dim != 0 && ds.dim() != dim)
    throw DimensionMismatch(std::string(name) + " split has dimension " + std::to_string(ds.dim()) +
                            ", expected " + std::to_string(dim));
  if (classes != 0 && ds.num_classes != classes)
    throw DimensionMismatch(std::string(name) + " split has " + std::to_string(ds.num_classes) +
                            " classes, expected " + std::to_string(classes));
}

}  // namespace

SynthSpec RunConfig::synth_spec() const {
  SynthSpec s;
  s.longtail = {classes, largest, imbalance};
  s.dim = dim;
  s.separation = separation;
  s.val_per_class = val_per_class;
  s.test_per_class = test_per_class;
  s.balanced_per_class = balanced_per_class;
  return s;
}

ScheduleSpec RunConfig::stage1_schedule() const {
  return {alpha_s, alpha_c, alpha_form, static_cast<double>(stage1_epochs)};
}

ScheduleSpec RunConfig::stage2_schedule() const {
  if (stage2_alpha_clock == "global")
    return {alpha_s, alpha_c, alpha_form, static_cast<double>(stage1_epochs + stage2_epochs)};
  return {alpha_s, alpha_c, alpha_form, static_cast<double>(stage2_epochs)};
}

void RunConfig::validate() const {
  auto need = [](bool ok, const char* key, const std::string& msg) {
    if (!ok) throw ConfigError(key, std::string(key) + ": " + msg);
  };
  need(classes >= 2, "classes", "need at least two classes");
  need(largest >= 1, "largest", "must be >= 1");
  need(imbalance >= 1.0, "imbalance", "must be >= 1");
  need(largest >= imbalance, "largest", "must be >= imbalance so every class has a sample");
  need(dim >= 2, "dim", "must be >= 2");
  need(separation >= 0.0, "separation", "must be >= 0");
  need(val_per_class >= 1, "val_per_class", "must be >= 1");
  need(test_per_class >= 1, "test_per_class", "must be >= 1");
  need(balanced_per_class >= 1, "balanced_per_class", "must be >= 1");
  need(!hidden.empty(), "hidden", "need at least one hidden layer");
  for (auto h : hidden) need(h > 0, "hidden", "widths must be positive");
  need(stage1_epochs >= 1, "stage1_epochs", "must be >= 1");
  need(stage2_epochs >= 1, "stage2_epochs", "must be >= 1");
  need(batch_size >= 1, "batch_size", "must be >= 1");
  need(lr > 0.0, "lr", "must be > 0");
  need(lr_min >= 0.0 && lr_min <= lr, "lr_min", "must lie in [0, lr]");
  need(stage2_lr_ratio > 0.0, "stage2_lr_ratio", "must be > 0");
  need(momentum >= 0.0 && momentum < 1.0, "momentum", "must lie in [0, 1)");
  need(weight_decay >= 0.0, "weight_decay", "must be >= 0");
  need(tau >= 0.0, "tau", "must be >= 0");
  need(alpha_s > 0.0, "alpha_s", "must be > 0");
  need(alpha_c > 1.0, "alpha_c", "must be > 1");
  need(kd_temperature > 0.0, "kd_temperature", "must be > 0");
  need(k_support >= 1, "k_support", "must be >= 1");
  need(lambda >= 0.0, "lambda", "must be >= 0");
  need(gamma >= 0.0, "gamma", "must be >= 0");
  need(beta_init >= 0.0 && beta_init <= 1.0, "beta_init", "must lie in [0, 1]");
  need(beta_step >= 0.0, "beta_step", "must be >= 0");
  need(gen_target >= 0, "gen_target", "must be >= 0");
  need(many_min >= few_max, "few_max", "must not exceed many_min");
  need(probe_epochs >= 1, "probe_epochs", "must be >= 1");
  need(probe_lr > 0.0, "probe_lr", "must be > 0");
  need(workers >= 1, "workers", "must be >= 1");
  need(stage2_alpha_clock == "local" || stage2_alpha_clock == "global", "stage2_alpha_clock",
       "must be 'local' or 'global'");
}

RunConfig baseline_config(RunConfig base) {
  base.loss = LossKind::CrossEntropy;
  base.afg = false;
  base.kd = false;
  return base;
}

std::optional<double> EvalMetrics::group(Group g) const {
  switch (g) {
    case Group::Many: return many;
    case Group::Medium: return medium;
    case Group::Few: return few;
  }
  return std::nullopt;
}

EvalMetrics evaluate_logits(const Matrix& logits, std::span<const int> labels, int num_classes,
                            const GroupAssignment& groups) {
  GLAG_EXPECT(logits.rows() == labels.size(), "one logit row per label");
  GLAG_EXPECT(static_cast<int>(logits.cols()) == num_classes, "logit width must equal class count");
  GLAG_EXPECT(groups.tags.size() == static_cast<std::size_t>(num_classes), "groups must cover every class");
  const auto L = static_cast<std::size_t>(num_classes);
  std::vector<int> correct(L, 0);
  EvalMetrics m;
  m.per_class_count.assign(L, 0);
  std::size_t total_correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    GLAG_EXPECT(y < L, "test label out of range");
    auto r = logits.row(i);
    const auto pred = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    ++m.per_class_count[y];
    if (pred == y) {
      ++correct[y];
      ++total_correct;
    }
  }
  m.overall = labels.empty() ? 0.0 : double(total_correct) / double(labels.size());
  m.per_class.resize(L);
  std::array<std::pair<int, int>, 3> group_tally{};  // (correct, count)
  for (std::size_t k = 0; k < L; ++k) {
    m.per_class[k] = m.per_class_count[k] > 0 ? double(correct[k]) / m.per_class_count[k]
                                             : std::numeric_limits<double>::quiet_NaN();
    auto& t = group_tally[static_cast<std::size_t>(groups.tags[k])];
    t.first += correct[k];
    t.second += m.per_class_count[k];
  }
  auto group_acc = [&](Group g) -> std::optional<double> {
    const auto& t = group_tally[static_cast<std::size_t>(g)];
    if (t.second == 0) return std::nullopt;
    return double(t.first) / t.second;
  };
  m.many = group_acc(Group::Many);
  m.medium = group_acc(Group::Medium);
  m.few = group_acc(Group::Few);
  return m;
}

EvalMetrics evaluate(const ModelParams& model, const EmbeddingDataset& test, const GroupAssignment& groups) {
  check_dataset(test, "test", model.input_dim(), static_cast<int>(model.num_classes()));
  const Matrix logits = classifier_logits(model, extract_features(model, test.features));
  return evaluate_logits(logits, test.labels, test.num_classes, groups);
}

StageResult train_stage1(const EmbeddingDataset& train, const EmbeddingDataset& val,
                         const EmbeddingDataset& test, const RunConfig& config) {
  config.validate();
  check_dataset(train, "train", 0, 0);
  check_dataset(val, "val", train.dim(), train.num_classes);
  check_dataset(test, "test", train.dim(), train.num_classes);
  const auto t0 = Clock::now();

  const auto counts = train.class_counts();
  const Vector priors = class_priors(counts);
  const auto groups = assign_groups(counts, config.many_min, config.few_max);
  const ScheduleSpec schedule = config.stage1_schedule();

  Rng init_rng = Rng::derive(config.seed, kInit);
  Rng shuffle_rng = Rng::derive(config.seed, kShuffle1);
  StageResult out;
  out.model.train_counts = counts;
  ModelParams& params = out.model.params;
  params = init_model(train.dim(), config.hidden, static_cast<std::size_t>(train.num_classes), init_rng);
  OptState opt = make_opt_state(params, config.momentum, config.weight_decay);

  out.report.label = "stage1";
  auto order = iota_indices(train.size());
  const auto batch = static_cast<std::size_t>(config.batch_size);
  for (int e = 0; e < config.stage1_epochs; ++e) {
    EpochRecord rec;
    rec.epoch = e;
    rec.lr = cosine_lr(e, config.stage1_epochs, config.lr, config.lr_min);
    switch (config.loss) {
      case LossKind::CrossEntropy: rec.alpha = 0.0; break;
      case LossKind::LogitAdjust: rec.alpha = config.tau; break;
      case LossKind::GraLoss: rec.alpha = alpha_at(schedule, e); break;
    }
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<int> labels;
      labels.reserve(idx.size());
      for (auto i : idx) labels.push_back(train.labels[i]);
      const BatchCache cache = forward_batch(params, gather_rows(train.features, idx));
      const BatchLoss bl = batch_loss(config.loss, cache.logits, labels, priors, rec.alpha);
      if (!std::isfinite(bl.loss))
        throw NumericError("stage 1 diverged at epoch " + std::to_string(e) + ": non-finite loss");
      loss_sum += bl.loss * double(idx.size());
      try {
        sgd_step(params, opt, backward(params, cache, bl.grad), rec.lr);
      } catch (const NumericError& err) {
        throw NumericError("stage 1 diverged at epoch " + std::to_string(e) + ": " + err.what());
      }
    }
    rec.loss = loss_sum / double(order.size());
    out.report.epochs.push_back(std::move(rec));
  }
  out.report.val = evaluate(params, val, groups);
  out.report.test = evaluate(params, test, groups);
  out.report.wall_seconds = seconds_since(t0);
  return out;
}

StageResult train_stage2(const Checkpoint& m1, const EmbeddingDataset& train,
                         const EmbeddingDataset& val, const EmbeddingDataset& test,
                         const RunConfig& config) {
  config.validate();
  m1.params.validate();
  const auto in_dim = m1.params.input_dim();
  const int L = static_cast<int>(m1.params.num_classes());
  check_dataset(train, "train", in_dim, L);
  check_dataset(val, "val", in_dim, L);
  check_dataset(test, "test", in_dim, L);
  const auto t0 = Clock::now();

  const auto counts = train.class_counts();
  const auto groups = assign_groups(counts, config.many_min, config.few_max);
  const ScheduleSpec schedule = config.stage2_schedule();
  const int alpha_offset = config.stage2_alpha_clock == "global" ? config.stage1_epochs : 0;

  StageResult out;
  out.model.train_counts = counts;
  ModelParams& params = out.model.params;
  params = m1.params;
  if (!config.warm_start) {
    Rng cls_rng = Rng::derive(config.seed, kClassifier);
    reset_classifier(params, cls_rng);
  }
  if (config.learnable_scaling) enable_scaling(params);

  // the feature model is frozen, so features are computed once
  const Matrix train_feat = extract_features(m1.params, train.features);
  const Matrix val_feat = extract_features(m1.params, val.features);
  const std::size_t F = train_feat.cols();

  // AFG state; statistics are constant because the features are frozen
  const double lambda = config.stats_transform ? config.lambda : 1.0;
  ClassStats stats;
  GenerationPlan plan;
  BetaState beta;
  std::vector<Matrix> class_feats(static_cast<std::size_t>(L));
  std::vector<std::vector<std::int64_t>> class_rows(static_cast<std::size_t>(L));
  if (config.afg) {
    const Matrix transformed = lambda == 1.0 ? train_feat : tukey_transform(train_feat, lambda);
    stats = estimate_class_stats(transformed, train.labels, L);
    const int target = config.gen_target > 0 ? config.gen_target
                                             : *std::max_element(counts.begin(), counts.end());
    plan = build_generation_plan(counts, target, config.gen_cap < 0 ? kNoCap : config.gen_cap);
    beta = init_beta(plan, config.beta_init, config.beta_step);
    std::vector<std::vector<std::size_t>> idx(static_cast<std::size_t>(L));
    for (std::size_t i = 0; i < train.size(); ++i) idx[static_cast<std::size_t>(train.labels[i])].push_back(i);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      class_feats[k] = gather_rows(transformed, idx[k]);
      class_rows[k].assign(idx[k].begin(), idx[k].end());
    }
  }
  const AfgSettings afg_settings{config.k_support, config.gamma};

  std::vector<bool> real_head(train.size());
  for (std::size_t i = 0; i < train.size(); ++i)
    real_head[i] = groups.tags[static_cast<std::size_t>(train.labels[i])] == Group::Many;

  OptState opt = make_opt_state(params, config.momentum, config.weight_decay);
  const ParamMask mask{false, config.train_weights, true, true};
  const double base_lr = config.lr * config.stage2_lr_ratio;
  const double min_lr = config.lr_min * config.stage2_lr_ratio;
  Rng shuffle_rng = Rng::derive(config.seed, kShuffle2);
  const auto batch = static_cast<std::size_t>(config.batch_size);

  out.report.label = "stage2";
  for (int e = 0; e < config.stage2_epochs; ++e) {
    EpochRecord rec;
    rec.epoch = e;
    rec.lr = cosine_lr(e, config.stage2_epochs, base_lr, min_lr);
    rec.alpha = config.kd ? alpha_at(schedule, e + alpha_offset) : 0.0;

    // real features first, generated ones appended
    Matrix teacher = classifier_logits(m1.params, train_feat);
    std::vector<double> pool(train_feat.data());
    std::vector<int> labels(train.labels);
    std::vector<GeneratedSample> records;
    if (config.afg) {
      for (int k = 0; k < L; ++k) {
        const int n = plan.generate[static_cast<std::size_t>(k)];
        if (n <= 0) continue;
        Rng gen_rng = Rng::derive(config.seed, kGenerate + 1000ull * static_cast<std::uint64_t>(e),
                                  static_cast<std::uint64_t>(k));
        GeneratedSet set = generate_for_class(k, n, class_feats[static_cast<std::size_t>(k)],
                                              class_rows[static_cast<std::size_t>(k)], stats,
                                              beta.beta[static_cast<std::size_t>(k)], afg_settings, gen_rng);
        for (std::size_t r = 0; r < set.features.rows(); ++r) {
          const Vector back = lambda == 1.0 ? Vector(set.features.row(r).begin(), set.features.row(r).end())
                                            : inverse_tukey(set.features.row(r), lambda);
          pool.insert(pool.end(), back.begin(), back.end());
          labels.push_back(k);
        }
        rec.generated += set.features.rows();
        records.insert(records.end(), set.records.begin(), set.records.end());
      }
    }
    const std::size_t n_real = train.size();
    const Matrix features(labels.size(), F, std::move(pool));
    if (!config.dump_generated.empty() && e + 1 == config.stage2_epochs && !records.empty()) {
      std::filesystem::create_directories(config.dump_generated);
      Matrix gen(records.size(), F,
                 std::vector<double>(features.data().begin() + static_cast<std::ptrdiff_t>(n_real * F),
                                     features.data().end()));
      dump_generated(records, gen, L, std::filesystem::path(config.dump_generated) / "generated.emb");
    }

    std::vector<std::size_t> order = config.balanced_sampling
                                         ? class_balanced_indices(labels, L, shuffle_rng)
                                         : iota_indices(labels.size());
    if (!config.balanced_sampling) shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<int> blabels;
      std::unique_ptr<bool[]> head(new bool[idx.size()]);
      blabels.reserve(idx.size());
      Matrix bteacher(idx.size(), static_cast<std::size_t>(L));
      for (std::size_t j = 0; j < idx.size(); ++j) {
        const std::size_t i = idx[j];
        blabels.push_back(labels[i]);
        head[j] = i < n_real && real_head[i];
        if (head[j]) std::copy(teacher.row(i).begin(), teacher.row(i).end(), bteacher.row(j).begin());
      }
      const Matrix bfeat = gather_rows(features, idx);
      const Matrix logits = classifier_logits(params, bfeat);
      const BatchLoss bl = stage2_loss(logits, blabels, bteacher, rec.alpha,
                                       std::span<const bool>(head.get(), idx.size()), config.kd_temperature);
      if (!std::isfinite(bl.loss))
        throw NumericError("stage 2 diverged at epoch " + std::to_string(e) + ": non-finite loss");
      loss_sum += bl.loss * double(idx.size());
      try {
        sgd_step(params, opt, classifier_backward(params, bfeat, bl.grad), rec.lr, mask);
      } catch (const NumericError& err) {
        throw NumericError("stage 2 diverged at epoch " + std::to_string(e) + ": " + err.what());
      }
    }
    rec.loss = loss_sum / double(order.size());

    const EvalMetrics v = evaluate_logits(classifier_logits(params, val_feat), val.labels, L, groups);
    rec.val_accuracy = v.overall;
    if (config.afg) {
      if (config.adaptive_beta) {
        Vector acc(v.per_class);
        for (double& a : acc)
          if (std::isnan(a)) a = 0.0;
        beta = update_beta(beta, acc);
      }
      rec.beta = beta.beta;
    }
    out.report.epochs.push_back(std::move(rec));
  }
  out.report.val = evaluate(params, val, groups);
  out.report.test = evaluate(params, test, groups);
  out.report.wall_seconds = seconds_since(t0);
  return out;
}

MetricsReport probe_features(const ModelParams& model, const EmbeddingDataset& balanced_train,
                             const EmbeddingDataset& test, const RunConfig& config,
                             std::span<const int> train_counts) {
  config.validate();
  model.validate();
  GLAG_EXPECT(train_counts.empty() || train_counts.size() == model.num_classes(),
              "probe: train counts must cover every class");
  const int L = static_cast<int>(model.num_classes());
  check_dataset(balanced_train, "balanced train", model.input_dim(), L);
  check_dataset(test, "test", model.input_dim(), L);
  const auto t0 = Clock::now();

  ModelParams probe = model;
  Rng init_rng = Rng::derive(config.seed, kProbeInit);
  reset_classifier(probe, init_rng);
  const Matrix feats = extract_features(probe, balanced_train.features);

  OptState opt = make_opt_state(probe, config.momentum, config.weight_decay);
  const ParamMask mask{false, true, true, false};
  Rng shuffle_rng = Rng::derive(config.seed, kProbeShuffle);
  auto order = iota_indices(balanced_train.size());
  const auto batch = static_cast<std::size_t>(config.batch_size);
  MetricsReport report;
  report.label = "probe";
  for (int e = 0; e < config.probe_epochs; ++e) {
    EpochRecord rec;
    rec.epoch = e;
    rec.lr = cosine_lr(e, config.probe_epochs, config.probe_lr, 0.0);
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(balanced_train.labels[i]);
      const Matrix bfeat = gather_rows(feats, idx);
      const BatchLoss bl = batch_loss(LossKind::CrossEntropy, classifier_logits(probe, bfeat), labels, {}, 0.0);
      if (!std::isfinite(bl.loss)) throw NumericError("probe diverged at epoch " + std::to_string(e));
      loss_sum += bl.loss * double(idx.size());
      sgd_step(probe, opt, classifier_backward(probe, bfeat, bl.grad), rec.lr, mask);
    }
    rec.loss = loss_sum / double(order.size());
    report.epochs.push_back(std::move(rec));
  }
  const auto counts = train_counts.empty() ? balanced_train.class_counts()
                                           : std::vector<int>(train_counts.begin(), train_counts.end());
  const auto groups = assign_groups(counts, config.many_min, config.few_max);
  report.test = evaluate(probe, test, groups);
  report.wall_seconds = seconds_since(t0);
  return report;
}

RunResult run_glag(const EmbeddingDataset& train, const EmbeddingDataset& val,
                   const EmbeddingDataset& test, const RunConfig& config, bool with_stage2) {
  RunResult r{train_stage1(train, val, test, config), std::nullopt};
  if (with_stage2) r.stage2 = train_stage2(r.stage1.model, train, val, test, config);
  return r;
}

const char* axis_name(AblationAxis a) {
  switch (a) {
    case AblationAxis::AlphaForm: return "alpha_form";
    case AblationAxis::LossChoice: return "loss_choice";
    case AblationAxis::Components: return "components";
  }
  return "?";
}

AblationAxis parse_axis(const std::string& name) {
  if (name == "alpha_form") return AblationAxis::AlphaForm;
  if (name == "loss_choice") return AblationAxis::LossChoice;
  if (name == "components") return AblationAxis::Components;
  throw ContractViolation("unknown ablation axis: " + name);
}

std::vector<AblationCell> ablation_cells(const RunConfig& base, AblationAxis axis) {
  std::vector<AblationCell> cells;
  switch (axis) {
    case AblationAxis::AlphaForm: {
      auto add = [&](const std::string& name, AlphaForm form, double c) {
        RunConfig cfg = base;
        cfg.loss = LossKind::GraLoss;
        cfg.alpha_form = form;
        cfg.alpha_c = c;
        cells.push_back({name, cfg, false, true, ""});
      };
      add("linear", AlphaForm::Linear, 2.0);
      add("concave", AlphaForm::Concave, 2.0);
      add("convex(c=4)", AlphaForm::Convex, 4.0);
      add("convex(c=6)", AlphaForm::Convex, 6.0);
      add("convex(c=8)", AlphaForm::Convex, 8.0);
      add("convex(c=2)", AlphaForm::Convex, 2.0);
      break;
    }
    case AblationAxis::LossChoice: {
      for (const char* method : {"cRT", "LWS"}) {
        for (LossKind loss : {LossKind::CrossEntropy, LossKind::GraLoss, LossKind::LogitAdjust}) {
          RunConfig cfg = base;
          cfg.loss = loss;
          cfg.afg = false;
          cfg.kd = false;
          cfg.balanced_sampling = true;
          if (std::string(method) == "cRT") {
            cfg.warm_start = false;
            cfg.learnable_scaling = false;
            cfg.train_weights = true;
          } else {
            cfg.warm_start = true;
            cfg.learnable_scaling = true;
            cfg.train_weights = false;
          }
          cells.push_back({std::string(method) + "/" + loss_kind_name(loss), cfg, true, false, method});
        }
      }
      break;
    }
    case AblationAxis::Components: {
      auto add = [&](const std::string& name, LossKind loss, bool stage2, bool kd) {
        RunConfig cfg = base;
        cfg.loss = loss;
        cfg.afg = stage2;
        cfg.adaptive_beta = stage2;
        cfg.kd = kd;
        cells.push_back({name, cfg, stage2, false, stage2 ? "AFG" : ""});
      };
      add("ce", LossKind::CrossEntropy, false, false);
      add("graloss", LossKind::GraLoss, false, false);
      add("logit-adjust", LossKind::LogitAdjust, false, false);
      add("graloss+ad", LossKind::GraLoss, true, false);
      add("logit-adjust+ad+kd", LossKind::LogitAdjust, true, true);
      add("ce+ad+kd", LossKind::CrossEntropy, true, true);
      add("graloss+ad+kd", LossKind::GraLoss, true, true);
      break;
    }
  }
  return cells;
}

namespace {

// Stage-one outcome depends only on these fields (plus the shared data and seed).
auto stage1_key(const RunConfig& c) {
  const bool graloss = c.loss == LossKind::GraLoss;
  return std::make_tuple(static_cast<int>(c.loss), c.loss == LossKind::LogitAdjust ? c.tau : 0.0,
                         graloss ? static_cast<int>(c.alpha_form) : 0, graloss ? c.alpha_c : 0.0,
                         graloss ? c.alpha_s : 0.0);
}

template <class Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const std::size_t pool = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (pool <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < pool; ++t) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : threads) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

AblationTable run_ablation(const RunConfig& base, AblationAxis axis, const EmbeddingDataset& train,
                           const EmbeddingDataset& val, const EmbeddingDataset& test,
                           const EmbeddingDataset& balanced, int workers) {
  AblationTable table;
  table.axis = axis;
  table.dataset_hash = dataset_hash(train) ^ (dataset_hash(val) * 31) ^ (dataset_hash(test) * 37) ^
                       (dataset_hash(balanced) * 41);
  const auto cells = ablation_cells(base, axis);

  std::map<decltype(stage1_key(base)), std::size_t> slot_of;
  std::vector<std::size_t> cell_slot;
  std::vector<const RunConfig*> slot_config;
  for (const auto& cell : cells) {
    auto [it, inserted] = slot_of.try_emplace(stage1_key(cell.config), slot_config.size());
    if (inserted) slot_config.push_back(&cell.config);
    cell_slot.push_back(it->second);
  }
  std::vector<StageResult> stage1(slot_config.size());
  parallel_for(stage1.size(), workers,
               [&](std::size_t s) { stage1[s] = train_stage1(train, val, test, *slot_config[s]); });

  table.rows.resize(cells.size());
  parallel_for(cells.size(), workers, [&](std::size_t i) {
    AblationRow& row = table.rows[i];
    row.cell = cells[i];
    const StageResult& s1 = stage1[cell_slot[i]];
    row.stage1 = s1.report;
    if (cells[i].stage2) row.stage2 = train_stage2(s1.model, train, val, test, cells[i].config).report;
    if (cells[i].probe)
      row.probe_accuracy = probe_features(s1.model.params, balanced, test, cells[i].config,
                                          s1.model.train_counts).test.overall;
  });
  return table;
}

}  // namespace glag
