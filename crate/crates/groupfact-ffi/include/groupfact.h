#ifndef GROUPFACT_H
#define GROUPFACT_H

/* Generated by cbindgen from groupfact-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Decision rule for `gf_predict`.
 */
typedef enum GfRule {
  GF_RULE_NEAREST_BASIS = 0,
  GF_RULE_FARTHEST_BASIS = 1,
  GF_RULE_SCALED_NEAREST_BASIS = 2,
} GfRule;

/**
 * Result of an FFI call. Values match the CLI exit codes.
 */
typedef enum GfStatus {
  GF_STATUS_OK = 0,
  /**
   * Null handle, invalid UTF-8, or an internal panic.
   */
  GF_STATUS_USAGE = 1,
  GF_STATUS_CONFIG = 2,
  GF_STATUS_DATA = 3,
  GF_STATUS_NUMERIC = 4,
} GfStatus;

/**
 * Opaque multi-subject dataset handle.
 */
typedef struct GfDataset GfDataset;

/**
 * Opaque posterior handle.
 */
typedef struct GfPosterior GfPosterior;

/**
 * Model and solver settings; mirror the library defaults when zeroed via
 * `gf_params_default`.
 */
typedef struct GfFitParams {
  double a;
  double b;
  /**
   * Activation prior shared by all classes (the C ABI does not expose
   * per-class values).
   */
  double c;
  uintptr_t num_classes;
  uintptr_t num_individual;
  uintptr_t max_iters;
  uintptr_t min_iters;
  double rel_tol;
  uint64_t seed;
} GfFitParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the most recent error message for this thread into `buf`
 * (NUL-terminated, truncated to `cap`). Returns the full message length.
 *
 * # Safety
 * `buf` must point to `cap` writable bytes, or be null (query mode).
 */
uintptr_t gf_last_error(char *buf, uintptr_t cap);

/**
 * Fills `params` with the library defaults (a = b = c = 0.1, K = 3, J = 1,
 * 500 sweeps, tolerance 1e-6).
 *
 * # Safety
 * `params` must point to a writable `GfFitParams`.
 */
void gf_params_default(struct GfFitParams *params);

/**
 * Creates an empty dataset; add subjects with `gf_dataset_add_subject`.
 */
struct GfDataset *gf_dataset_new(void);

/**
 * Appends one subject.
 *
 * `features` is row-major `num_features x num_frames` (frame index varies
 * fastest); `labels` holds `num_frames` class ids in `1..=K`.
 *
 * # Safety
 * `dataset` must come from `gf_dataset_new` and not be freed; `features`
 * must hold `num_features * num_frames` doubles; `labels` must hold
 * `num_frames` entries.
 */
enum GfStatus gf_dataset_add_subject(struct GfDataset *dataset,
                                     const double *features,
                                     uintptr_t num_features,
                                     uintptr_t num_frames,
                                     const uint32_t *labels);

/**
 * Draws a synthetic dataset from the generative model; labels cycle
 * through `1..=num_classes`.
 */
struct GfDataset *gf_dataset_sample(struct GfFitParams params,
                                    uintptr_t num_subjects,
                                    uintptr_t num_features,
                                    uintptr_t num_frames,
                                    uint64_t seed);

/**
 * Releases a dataset handle. Null is a no-op.
 *
 * # Safety
 * `dataset` must be a live handle from this library, freed at most once.
 */
void gf_dataset_free(struct GfDataset *dataset);

/**
 * Runs variational inference; returns a posterior handle or null.
 *
 * # Safety
 * `dataset` must be a live handle with at least one subject.
 */
struct GfPosterior *gf_fit(const struct GfDataset *dataset, struct GfFitParams params);

/**
 * Releases a posterior handle. Null is a no-op.
 *
 * # Safety
 * `posterior` must be a live handle from this library, freed at most once.
 */
void gf_posterior_free(struct GfPosterior *posterior);

/**
 * Number of features (M) of a posterior; 0 for null.
 *
 * # Safety
 * `posterior` must be a live handle or null.
 */
uintptr_t gf_posterior_num_features(const struct GfPosterior *posterior);

/**
 * Number of classes (K) of a posterior; 0 for null.
 *
 * # Safety
 * `posterior` must be a live handle or null.
 */
uintptr_t gf_posterior_num_classes(const struct GfPosterior *posterior);

/**
 * Copies the posterior-mean common basis E[A_C] into `out`, row-major
 * `num_features x num_classes`.
 *
 * # Safety
 * `out` must hold `num_features * num_classes` doubles.
 */
enum GfStatus gf_posterior_common_basis(const struct GfPosterior *posterior, double *out);

/**
 * Classifies frames against a posterior's common basis.
 *
 * `features` is row-major `num_features x num_frames`; `out_labels`
 * receives `num_frames` class ids in `1..=K`.
 *
 * # Safety
 * Buffers must match the documented sizes; `posterior` must be live.
 */
enum GfStatus gf_predict(const struct GfPosterior *posterior,
                         const double *features,
                         uintptr_t num_features,
                         uintptr_t num_frames,
                         enum GfRule rule,
                         uint32_t *out_labels);

/**
 * Writes a posterior to the flat CSV format.
 *
 * # Safety
 * `posterior` must be live; `path` must be a NUL-terminated UTF-8 string.
 */
enum GfStatus gf_posterior_save_csv(const struct GfPosterior *posterior, const char *path);

/**
 * Reads a posterior from the flat CSV format; returns null on failure.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string.
 */
struct GfPosterior *gf_posterior_load_csv(const char *path);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* GROUPFACT_H */
