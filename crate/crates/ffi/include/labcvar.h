#ifndef LABCVAR_H
#define LABCVAR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Values other than `Ok` mirror the CLI exit codes.
 */
typedef enum LabcvarStatus {
  LABCVAR_STATUS_OK = 0,
  LABCVAR_STATUS_NULL_POINTER = 1,
  LABCVAR_STATUS_INVALID_ARGUMENT = 2,
  LABCVAR_STATUS_SHAPE_MISMATCH = 3,
  LABCVAR_STATUS_INFEASIBLE = 4,
  LABCVAR_STATUS_PARSE = 5,
  LABCVAR_STATUS_IO = 6,
  LABCVAR_STATUS_CONFIG = 7,
  LABCVAR_STATUS_INTERNAL = 8,
} LabcvarStatus;

/**
 * Class-wise weight bounds built from training counts.
 */
typedef struct LabcvarBounds LabcvarBounds;

/**
 * Fully connected classifier.
 */
typedef struct LabcvarModel LabcvarModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; empty after a success. The
 * pointer stays valid until the next call into this library on the thread.
 */
const char *labcvar_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *labcvar_version(void);

/**
 * Feasible `tau1` interval `[lo, hi]` for the given counts, `k` and `eta`.
 * An empty interval is reported as `Infeasible` with `lo`/`hi` set to NaN.
 *
 * # Safety
 * `counts` must point to `n_classes` values; `lo` and `hi` must be writable.
 */
enum LabcvarStatus labcvar_feasible_tau_range(const size_t *counts,
                                              size_t n_classes,
                                              double k,
                                              double eta,
                                              double *lo,
                                              double *hi);

/**
 * Optimal class bounds for the given counts and `(k, tau1, eta)`.
 *
 * # Safety
 * `counts` must point to `n_classes` values; `out_bounds` must be writable.
 * The handle must be released with [`labcvar_bounds_free`].
 */
enum LabcvarStatus labcvar_bounds_new(const size_t *counts,
                                      size_t n_classes,
                                      double k,
                                      double tau1,
                                      double eta,
                                      struct LabcvarBounds **out_bounds);

/**
 * # Safety
 * `bounds` must come from [`labcvar_bounds_new`] and not be used afterwards.
 * Null is accepted.
 */
void labcvar_bounds_free(struct LabcvarBounds *bounds);

/**
 * Number of classes covered by the bounds, 0 for a null handle.
 *
 * # Safety
 * `bounds` must be null or a live handle.
 */
size_t labcvar_bounds_num_classes(const struct LabcvarBounds *bounds);

/**
 * Copies `alpha`, `beta`, the per-sample lower weights `1/(beta_j n)` and
 * upper weights `1/(alpha_j n)`. Any output pointer may be null to skip it.
 *
 * # Safety
 * `bounds` must be a live handle; non-null outputs must hold `n_classes`
 * values.
 */
enum LabcvarStatus labcvar_bounds_get(const struct LabcvarBounds *bounds,
                                      size_t n_classes,
                                      double *alpha,
                                      double *beta,
                                      double *lower_weight,
                                      double *upper_weight);

/**
 * `max Σ w_i loss_i` over the simplex intersected with `lower ≤ w ≤ upper`.
 * `weights` (may be null) receives the maximizer.
 *
 * # Safety
 * `losses`, `lower`, `upper` must point to `n` values, `weights` to `n`
 * writable values when non-null, `objective` must be writable.
 */
enum LabcvarStatus labcvar_solve(const double *losses,
                                 const double *lower,
                                 const double *upper,
                                 size_t n,
                                 double *weights,
                                 double *objective);

/**
 * Zero-one closed form evaluated on per-class error rates.
 *
 * # Safety
 * `bounds` must be a live handle, `per_class_error` must point to
 * `n_classes` values, `value` must be writable.
 */
enum LabcvarStatus labcvar_closed_form_zero_one(const struct LabcvarBounds *bounds,
                                                const double *per_class_error,
                                                size_t n_classes,
                                                double *value);

/**
 * Evaluates a loss given as JSON (e.g. `{"kind":"erm"}`) on a batch of
 * row-major logits. `grad` (may be null) receives `∂loss/∂logits`.
 *
 * # Safety
 * `spec_json` must be a NUL-terminated string; `counts` must point to
 * `n_classes` values; `logits` and `grad` (when non-null) to
 * `batch * n_classes` values; `labels` to `batch` values; `total` must be
 * writable.
 */
enum LabcvarStatus labcvar_loss_evaluate(const char *spec_json,
                                         const size_t *counts,
                                         size_t n_classes,
                                         const double *logits,
                                         const size_t *labels,
                                         size_t batch,
                                         size_t epoch,
                                         double *total,
                                         double *grad);

/**
 * Randomly initialized model. `hidden` lists the hidden widths (may be null
 * when `n_hidden` is 0).
 *
 * # Safety
 * `hidden` must point to `n_hidden` values; `out_model` must be writable.
 * Release the handle with [`labcvar_model_free`].
 */
enum LabcvarStatus labcvar_model_new(size_t input_dim,
                                     const size_t *hidden,
                                     size_t n_hidden,
                                     size_t n_classes,
                                     uint64_t seed,
                                     struct LabcvarModel **out_model);

/**
 * Reads a text checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_model` must be writable.
 */
enum LabcvarStatus labcvar_model_load(const char *path, struct LabcvarModel **out_model);

/**
 * Writes a text checkpoint.
 *
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum LabcvarStatus labcvar_model_save(const struct LabcvarModel *model, const char *path);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards. Null is
 * accepted.
 */
void labcvar_model_free(struct LabcvarModel *model);

/**
 * Input width and number of classes of a model.
 *
 * # Safety
 * `model` must be a live handle; outputs must be writable.
 */
enum LabcvarStatus labcvar_model_dims(const struct LabcvarModel *model,
                                      size_t *input_dim,
                                      size_t *n_classes);

/**
 * Logits for `rows` row-major inputs of width `cols`.
 *
 * # Safety
 * `x` must point to `rows * cols` values and `logits` to
 * `rows * n_classes` writable values.
 */
enum LabcvarStatus labcvar_model_forward(const struct LabcvarModel *model,
                                         const double *x,
                                         size_t rows,
                                         size_t cols,
                                         double *logits,
                                         size_t logits_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LABCVAR_H */
