/* SPDX-License-Identifier: Apache-2.0 */
/*
 * C interface to the glag long-tail feature laboratory.
 *
 * Every object is an opaque handle owned by the caller and released with the
 * matching *_free function. Functions return a glag_status; on failure the
 * thread-local message from glag_last_error() describes what went wrong and
 * no output handle is written. Strings returned through char** are released
 * with glag_string_free.
 */
#ifndef GLAG_GLAG_H
#define GLAG_GLAG_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define GLAG_API __declspec(dllexport)
#else
#define GLAG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum glag_status {
  GLAG_OK = 0,
  GLAG_ERR_INVALID_ARGUMENT = 1, /* null pointer or broken precondition */
  GLAG_ERR_CONFIG = 2,           /* bad config key or value */
  GLAG_ERR_IO = 3,               /* file could not be opened or written */
  GLAG_ERR_PARSE = 4,            /* malformed embedding or checkpoint file */
  GLAG_ERR_DIMENSION = 5,        /* model and dataset shapes disagree */
  GLAG_ERR_NUMERIC = 6,          /* training diverged, matrix not PSD */
  GLAG_ERR_INTERNAL = 7
} glag_status;

typedef struct glag_config glag_config;
typedef struct glag_dataset glag_dataset;
typedef struct glag_model glag_model;
typedef struct glag_report glag_report;

GLAG_API const char* glag_version(void);
GLAG_API const char* glag_last_error(void);
/* Config key named by the last GLAG_ERR_CONFIG, or "" */
GLAG_API const char* glag_last_error_key(void);
GLAG_API void glag_string_free(char* s);
GLAG_API void glag_set_warnings(int enabled);

/* ---- config: flat JSON object, unknown keys are rejected ---- */
GLAG_API glag_status glag_config_default(glag_config** out);
GLAG_API glag_status glag_config_from_json(const char* json, glag_config** out);
/* Applies the keys of `json` on top of `cfg` in place. */
GLAG_API glag_status glag_config_merge_json(glag_config* cfg, const char* json);
/* "default" leaves cfg unchanged; "baseline" selects plain cross-entropy
 * with feature generation and distillation off. */
GLAG_API glag_status glag_config_apply_preset(glag_config* cfg, const char* preset);
GLAG_API glag_status glag_config_to_json(const glag_config* cfg, char** out_json);
GLAG_API void glag_config_free(glag_config* cfg);

/* ---- datasets ---- */
/* Long-tailed synthetic benchmark from the config's data keys and seed.
 * `truth_json` (optional, may be NULL) receives the generating means and
 * diagonal variances. */
GLAG_API glag_status glag_synth(const glag_config* cfg, glag_dataset** train, glag_dataset** val,
                                glag_dataset** test, glag_dataset** balanced, char** truth_json);
/* Binary EMB1 files or CSV with header label,f0,...,f{D-1}. */
GLAG_API glag_status glag_dataset_load(const char* path, glag_dataset** out);
GLAG_API glag_status glag_dataset_save(const glag_dataset* ds, const char* path);
GLAG_API glag_status glag_dataset_shape(const glag_dataset* ds, uint32_t* n, uint32_t* dim,
                                        uint32_t* classes);
GLAG_API glag_status glag_dataset_class_counts(const glag_dataset* ds, uint32_t* counts,
                                               size_t capacity);
GLAG_API glag_status glag_dataset_hash(const glag_dataset* ds, uint64_t* out);
GLAG_API void glag_dataset_free(glag_dataset* ds);

/* ---- models (checkpoint files are versioned and checksummed) ---- */
GLAG_API glag_status glag_model_load(const char* path, glag_model** out);
GLAG_API glag_status glag_model_save(const glag_model* m, const char* path);
GLAG_API glag_status glag_model_shape(const glag_model* m, uint32_t* input_dim,
                                      uint32_t* feature_dim, uint32_t* classes);
GLAG_API void glag_model_free(glag_model* m);

/* ---- training and evaluation ---- */
/* Stage one. `report` holds the run document for this stage. */
GLAG_API glag_status glag_train_stage1(const glag_config* cfg, const glag_dataset* train,
                                       const glag_dataset* val, const glag_dataset* test,
                                       glag_model** m1, glag_report** report);
/* Stage two on the frozen features of `m1`. */
GLAG_API glag_status glag_train_stage2(const glag_config* cfg, const glag_model* m1,
                                       const glag_dataset* train, const glag_dataset* val,
                                       const glag_dataset* test, glag_model** m2,
                                       glag_report** report);
/* Both stages; `m2` may be NULL to skip stage two. */
GLAG_API glag_status glag_train(const glag_config* cfg, const glag_dataset* train,
                                const glag_dataset* val, const glag_dataset* test,
                                glag_model** m1, glag_model** m2, glag_report** report);
/* Groups come from the class counts stored in the checkpoint. */
GLAG_API glag_status glag_evaluate(const glag_config* cfg, const glag_model* m,
                                   const glag_dataset* test, glag_report** report);
GLAG_API glag_status glag_probe(const glag_config* cfg, const glag_model* m,
                                const glag_dataset* balanced_train, const glag_dataset* test,
                                glag_report** report);
/* axis: "alpha_form", "loss_choice" or "components". */
GLAG_API glag_status glag_ablate(const glag_config* cfg, const char* axis,
                                 const glag_dataset* train, const glag_dataset* val,
                                 const glag_dataset* test, const glag_dataset* balanced,
                                 glag_report** table);

/* ---- reports ---- */
GLAG_API glag_status glag_report_json(const glag_report* r, char** out_json);
GLAG_API glag_status glag_report_csv(const glag_report* r, char** out_csv);
/* Wall-clock data, kept separate so the JSON document is reproducible. */
GLAG_API glag_status glag_report_timing_json(const glag_report* r, char** out_json);
/* Reads a number by JSON pointer, e.g. "/final/few". */
GLAG_API glag_status glag_report_get(const glag_report* r, const char* json_pointer, double* out);
GLAG_API void glag_report_free(glag_report* r);

#ifdef __cplusplus
}
#endif

#endif /* GLAG_GLAG_H */
