// SPDX-License-Identifier: Apache-2.0
#include "glag/glag.h"

#include <cstring>
#include <new>
#include <string>

#include "glag/data.hpp"
#include "glag/error.hpp"
#include "glag/model.hpp"
#include "glag/pipeline.hpp"
#include "glag/report.hpp"

using nlohmann::json;

struct glag_config {
  glag::RunConfig cfg;
};

struct glag_dataset {
  glag::EmbeddingDataset ds;
};

struct glag_model {
  glag::Checkpoint ckpt;
};

struct glag_report {
  json doc;
  std::string csv;
  json timing;
};

namespace {

thread_local std::string t_last_error;
thread_local std::string t_last_key;

glag_status fail(glag_status code, const std::string& message, std::string key = {}) {
  t_last_error = message;
  t_last_key = std::move(key);
  return code;
}

template <class Fn>
glag_status guarded(Fn&& fn) {
  try {
    fn();
    t_last_error.clear();
    t_last_key.clear();
    return GLAG_OK;
  } catch (const glag::ConfigError& e) {
    return fail(GLAG_ERR_CONFIG, e.what(), e.key());
  } catch (const glag::ParseError& e) {
    return fail(GLAG_ERR_PARSE, e.what());
  } catch (const glag::IoError& e) {
    return fail(GLAG_ERR_IO, e.what());
  } catch (const glag::DimensionMismatch& e) {
    return fail(GLAG_ERR_DIMENSION, e.what());
  } catch (const glag::NumericError& e) {
    return fail(GLAG_ERR_NUMERIC, e.what());
  } catch (const glag::NotPsdError& e) {
    return fail(GLAG_ERR_NUMERIC, e.what());
  } catch (const glag::ContractViolation& e) {
    return fail(GLAG_ERR_INVALID_ARGUMENT, e.what());
  } catch (const json::parse_error& e) {
    return fail(GLAG_ERR_CONFIG, std::string("config is not valid JSON: ") + e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(GLAG_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(GLAG_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(GLAG_ERR_INTERNAL, "unknown error");
  }
}

#define GLAG_REQUIRE(ptr)                                                         \
  do {                                                                            \
    if (!(ptr)) return fail(GLAG_ERR_INVALID_ARGUMENT, "null argument: " #ptr);   \
  } while (0)

char* copy_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

glag_report* make_run_report(const glag::RunConfig& cfg, const std::vector<glag::MetricsReport>& stages) {
  auto* r = new glag_report;
  r->doc = glag::run_to_json(cfg, stages);
  r->csv = glag::run_to_csv("seed" + std::to_string(cfg.seed), stages);
  r->timing = glag::timing_to_json(stages);
  return r;
}

}  // namespace

extern "C" {

const char* glag_version(void) { return "1.0.0"; }

const char* glag_last_error(void) { return t_last_error.c_str(); }

const char* glag_last_error_key(void) { return t_last_key.c_str(); }

void glag_string_free(char* s) { delete[] s; }

void glag_set_warnings(int enabled) { glag::set_warnings_enabled(enabled != 0); }

glag_status glag_config_default(glag_config** out) {
  GLAG_REQUIRE(out);
  return guarded([&] { *out = new glag_config{}; });
}

glag_status glag_config_from_json(const char* text, glag_config** out) {
  GLAG_REQUIRE(text);
  GLAG_REQUIRE(out);
  return guarded([&] { *out = new glag_config{glag::config_from_json(json::parse(text))}; });
}

glag_status glag_config_merge_json(glag_config* cfg, const char* text) {
  GLAG_REQUIRE(cfg);
  GLAG_REQUIRE(text);
  return guarded([&] { cfg->cfg = glag::config_from_json(json::parse(text), cfg->cfg); });
}

glag_status glag_config_apply_preset(glag_config* cfg, const char* preset) {
  GLAG_REQUIRE(cfg);
  GLAG_REQUIRE(preset);
  return guarded([&] {
    const std::string name = preset;
    if (name == "baseline") {
      cfg->cfg = glag::baseline_config(cfg->cfg);
    } else if (name != "default") {
      throw glag::ConfigError("preset", "unknown preset '" + name + "'");
    }
  });
}

glag_status glag_config_to_json(const glag_config* cfg, char** out_json) {
  GLAG_REQUIRE(cfg);
  GLAG_REQUIRE(out_json);
  return guarded([&] { *out_json = copy_string(glag::config_to_json(cfg->cfg).dump(2)); });
}

void glag_config_free(glag_config* cfg) { delete cfg; }

glag_status glag_synth(const glag_config* cfg, glag_dataset** train, glag_dataset** val,
                       glag_dataset** test, glag_dataset** balanced, char** truth_json) {
  GLAG_REQUIRE(cfg);
  GLAG_REQUIRE(train);
  GLAG_REQUIRE(val);
  GLAG_REQUIRE(test);
  GLAG_REQUIRE(balanced);
  return guarded([&] {
    cfg->cfg.validate();
    auto data = glag::synth_gaussian_mixture(cfg->cfg.synth_spec(), cfg->cfg.seed);
    std::string truth;
    if (truth_json) {
      json t{{"seed", cfg->cfg.seed},
             {"class_counts", data.train.class_counts()},
             {"means", data.truth.means},
             {"variances", data.truth.variances}};
      truth = t.dump(2);
    }
    *train = new glag_dataset{std::move(data.train)};
    *val = new glag_dataset{std::move(data.val)};
    *test = new glag_dataset{std::move(data.test)};
    *balanced = new glag_dataset{std::move(data.balanced)};
    if (truth_json) *truth_json = copy_string(truth);
  });
}

glag_status glag_dataset_load(const char* path, glag_dataset** out) {
  GLAG_REQUIRE(path);
  GLAG_REQUIRE(out);
  return guarded([&] {
    auto ds = glag::load_embeddings(path);
    ds.validate();
    *out = new glag_dataset{std::move(ds)};
  });
}

glag_status glag_dataset_save(const glag_dataset* ds, const char* path) {
  GLAG_REQUIRE(ds);
  GLAG_REQUIRE(path);
  return guarded([&] { glag::save_embeddings(ds->ds, path); });
}

glag_status glag_dataset_shape(const glag_dataset* ds, uint32_t* n, uint32_t* dim, uint32_t* classes) {
  GLAG_REQUIRE(ds);
  if (n) *n = static_cast<uint32_t>(ds->ds.size());
  if (dim) *dim = static_cast<uint32_t>(ds->ds.dim());
  if (classes) *classes = static_cast<uint32_t>(ds->ds.num_classes);
  return GLAG_OK;
}

glag_status glag_dataset_class_counts(const glag_dataset* ds, uint32_t* counts, size_t capacity) {
  GLAG_REQUIRE(ds);
  GLAG_REQUIRE(counts);
  const auto c = ds->ds.class_counts();
  if (capacity < c.size()) return fail(GLAG_ERR_INVALID_ARGUMENT, "count buffer too small");
  for (std::size_t k = 0; k < c.size(); ++k) counts[k] = static_cast<uint32_t>(c[k]);
  return GLAG_OK;
}

glag_status glag_dataset_hash(const glag_dataset* ds, uint64_t* out) {
  GLAG_REQUIRE(ds);
  GLAG_REQUIRE(out);
  return guarded([&] { *out = glag::dataset_hash(ds->ds); });
}

void glag_dataset_free(glag_dataset* ds) { delete ds; }

glag_status glag_model_load(const char* path, glag_model** out) {
  GLAG_REQUIRE(path);
  GLAG_REQUIRE(out);
  return guarded([&] { *out = new glag_model{glag::load_checkpoint(path)}; });
}

glag_status glag_model_save(const glag_model* m, const char* path) {
  GLAG_REQUIRE(m);
  GLAG_REQUIRE(path);
  return guarded([&] { glag::save_checkpoint(m->ckpt, path); });
}

glag_status glag_model_shape(const glag_model* m, uint32_t* input_dim, uint32_t* feature_dim,
                             uint32_t* classes) {
  GLAG_REQUIRE(m);
  if (input_dim) *input_dim = static_cast<uint32_t>(m->ckpt.params.input_dim());
  if (feature_dim) *feature_dim = static_cast<uint32_t>(m->ckpt.params.feature_dim());
  if (classes) *classes = static_cast<uint32_t>(m->ckpt.params.num_classes());
  return GLAG_OK;
}

void glag_model_free(glag_model* m) { delete m; }

glag_status glag_train_stage1(const glag_config* cfg, const glag_dataset* train, const glag_dataset* val,
                              const glag_dataset* test, glag_model** m1, glag_report** report) {
  GLAG_REQUIRE(cfg);
  GLAG_REQUIRE(train);
  GLAG_REQUIRE(val);
  GLAG_REQUIRE(test);
  GLAG_REQUIRE(m1);
  return guarded([&] {
    auto s1 = glag::train_stage1(train->ds, val->ds, test->ds, cfg->cfg);
    glag_report* r = report ? make_run_report(cfg->cfg, {s1.report}) : nullptr;
    *m1 = new glag_model{std::move(s1.model)};
    if (report) *report = r;
  });
}

glag_status glag_train_stage2(const glag_config* cfg, const glag_model* m1, const glag_dataset* train,
                              const glag_dataset* val, const glag_dataset* test, glag_model** m2,
                              glag_report** report) {
  GLAG_REQUIRE(cfg);
  GLAG_REQUIRE(m1);
  GLAG_REQUIRE(train);
  GLAG_REQUIRE(val);
  GLAG_REQUIRE(test);
  GLAG_REQUIRE(m2);
  return guarded([&] {
    auto s2 = glag::train_stage2(m1->ckpt, train->ds, val->ds, test->ds, cfg->cfg);
    glag_report* r = report ? make_run_report(cfg->cfg, {s2.report}) : nullptr;
    *m2 = new glag_model{std::move(s2.model)};
    if (report) *report = r;
  });
}

glag_status glag_train(const glag_config* cfg, const glag_dataset* train, const glag_dataset* val,
                       const glag_dataset* test, glag_model** m1, glag_model** m2, glag_report** report) {
  GLAG_REQUIRE(cfg);
  GLAG_REQUIRE(train);
  GLAG_REQUIRE(val);
  GLAG_REQUIRE(test);
  GLAG_REQUIRE(m1);
  return guarded([&] {
    auto run = glag::run_glag(train->ds, val->ds, test->ds, cfg->cfg, m2 != nullptr);
    std::vector<glag::MetricsReport> stages{run.stage1.report};
    if (run.stage2) stages.push_back(run.stage2->report);
    glag_report* r = report ? make_run_report(cfg->cfg, stages) : nullptr;
    *m1 = new glag_model{std::move(run.stage1.model)};
    if (m2) *m2 = new glag_model{std::move(run.stage2->model)};
    if (report) *report = r;
  });
}

glag_status glag_evaluate(const glag_config* cfg, const glag_model* m, const glag_dataset* test,
                          glag_report** report) {
  GLAG_REQUIRE(cfg);
  GLAG_REQUIRE(m);
  GLAG_REQUIRE(test);
  GLAG_REQUIRE(report);
  return guarded([&] {
    const auto& counts = m->ckpt.train_counts;
    if (counts.size() != m->ckpt.params.num_classes())
      throw glag::DimensionMismatch("checkpoint does not record per-class training counts");
    glag::MetricsReport rep;
    rep.label = "eval";
    rep.test = glag::evaluate(m->ckpt.params, test->ds,
                              glag::assign_groups(counts, cfg->cfg.many_min, cfg->cfg.few_max));
    *report = make_run_report(cfg->cfg, {rep});
  });
}

glag_status glag_probe(const glag_config* cfg, const glag_model* m, const glag_dataset* balanced_train,
                       const glag_dataset* test, glag_report** report) {
  GLAG_REQUIRE(cfg);
  GLAG_REQUIRE(m);
  GLAG_REQUIRE(balanced_train);
  GLAG_REQUIRE(test);
  GLAG_REQUIRE(report);
  return guarded([&] {
    auto rep = glag::probe_features(m->ckpt.params, balanced_train->ds, test->ds, cfg->cfg,
                                      m->ckpt.train_counts);
    *report = make_run_report(cfg->cfg, {rep});
  });
}

glag_status glag_ablate(const glag_config* cfg, const char* axis, const glag_dataset* train,
                        const glag_dataset* val, const glag_dataset* test, const glag_dataset* balanced,
                        glag_report** table) {
  GLAG_REQUIRE(cfg);
  GLAG_REQUIRE(axis);
  GLAG_REQUIRE(train);
  GLAG_REQUIRE(val);
  GLAG_REQUIRE(test);
  GLAG_REQUIRE(balanced);
  GLAG_REQUIRE(table);
  return guarded([&] {
    glag::AblationAxis parsed;
    try {
      parsed = glag::parse_axis(axis);
    } catch (const glag::ContractViolation& e) {
      throw glag::ConfigError("axis", e.what());
    }
    auto t = glag::run_ablation(cfg->cfg, parsed, train->ds, val->ds, test->ds, balanced->ds,
                                cfg->cfg.workers);
    auto* r = new glag_report;
    r->doc = glag::ablation_to_json(cfg->cfg, t);
    r->csv = glag::ablation_to_csv(t);
    json timing = json::array();
    for (const auto& row : t.rows) {
      json cell{{"name", row.cell.name}, {"stage1_seconds", row.stage1.wall_seconds}};
      if (row.stage2) cell["stage2_seconds"] = row.stage2->wall_seconds;
      timing.push_back(std::move(cell));
    }
    r->timing = json{{"cells", timing}};
    *table = r;
  });
}

glag_status glag_report_json(const glag_report* r, char** out_json) {
  GLAG_REQUIRE(r);
  GLAG_REQUIRE(out_json);
  return guarded([&] { *out_json = copy_string(r->doc.dump(2)); });
}

glag_status glag_report_csv(const glag_report* r, char** out_csv) {
  GLAG_REQUIRE(r);
  GLAG_REQUIRE(out_csv);
  return guarded([&] { *out_csv = copy_string(r->csv); });
}

glag_status glag_report_timing_json(const glag_report* r, char** out_json) {
  GLAG_REQUIRE(r);
  GLAG_REQUIRE(out_json);
  return guarded([&] { *out_json = copy_string(r->timing.dump(2)); });
}

glag_status glag_report_get(const glag_report* r, const char* json_pointer, double* out) {
  GLAG_REQUIRE(r);
  GLAG_REQUIRE(json_pointer);
  GLAG_REQUIRE(out);
  return guarded([&] {
    json::json_pointer ptr;
    try {
      ptr = json::json_pointer(json_pointer);
    } catch (const json::exception& e) {
      throw glag::ContractViolation(std::string("bad JSON pointer: ") + e.what());
    }
    if (!r->doc.contains(ptr)) throw glag::ContractViolation(std::string("no such entry: ") + json_pointer);
    const auto& v = r->doc.at(ptr);
    if (!v.is_number()) throw glag::ContractViolation(std::string("entry is not a number: ") + json_pointer);
    *out = v.get<double>();
  });
}

void glag_report_free(glag_report* r) { delete r; }

}  // extern "C"
