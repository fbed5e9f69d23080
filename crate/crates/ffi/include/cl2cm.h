#ifndef CL2CM_H
#define CL2CM_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum Cl2cmStatus {
  CL2CM_STATUS_OK = 0,
  CL2CM_STATUS_NULL_POINTER = 1,
  CL2CM_STATUS_INVALID_ARGUMENT = 2,
  // Sinkhorn hit its iteration cap; outputs are still written.
  CL2CM_STATUS_NOT_CONVERGED = 3,
  CL2CM_STATUS_NUMERIC = 4,
  CL2CM_STATUS_CHECKPOINT = 5,
  CL2CM_STATUS_PANIC = 6,
} Cl2cmStatus;

// Loaded encoder parameters.
typedef struct Cl2cmModel Cl2cmModel;

// Retrieval metrics for one direction, all in percent.
typedef struct Cl2cmMetrics {
  double r1;
  double r5;
  double r10;
  double map;
} Cl2cmMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length plus one.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t cl2cm_last_error_message(char *buf, size_t len);

// Entropic OT plan of a `rows`×`cols` similarity matrix.
//
// Non-positive `epsilon`, zero `max_iterations` or non-positive `tolerance`
// select the defaults (0.1, 500, 1e-6).
//
// # Safety
// `similarity` and `plan_out` must hold `rows * cols` doubles;
// `iterations_out` may be null.
enum Cl2cmStatus cl2cm_sinkhorn(const double *similarity,
                                size_t rows,
                                size_t cols,
                                double epsilon,
                                size_t max_iterations,
                                double tolerance,
                                double *plan_out,
                                size_t *iterations_out);

// Thresholded, row-normalized pseudo-labels of a transport plan.
//
// # Safety
// `plan` and `labels_out` must hold `rows * cols` doubles; `gamma_out` may be null.
enum Cl2cmStatus cl2cm_pseudo_labels(const double *plan,
                                     size_t rows,
                                     size_t cols,
                                     double *labels_out,
                                     double *gamma_out);

// R@1/5/10 and mAP from 1-based gold ranks.
//
// # Safety
// `ranks` must hold `count` values; `out` must be valid.
enum Cl2cmStatus cl2cm_metrics(const size_t *ranks, size_t count, struct Cl2cmMetrics *out);

// Loads a checkpoint directory (or its manifest path).
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string; `out` must be valid.
enum Cl2cmStatus cl2cm_model_load(const char *path, struct Cl2cmModel **out);

// Releases a model; null is ignored.
//
// # Safety
// `model` must come from [`cl2cm_model_load`] and not be used afterwards.
void cl2cm_model_free(struct Cl2cmModel *model);

// Width of the shared embedding space, 0 for a null model.
//
// # Safety
// `model` must be null or a live model.
size_t cl2cm_model_dim(const struct Cl2cmModel *model);

// Expected vision feature length, 0 for a null model.
//
// # Safety
// `model` must be null or a live model.
size_t cl2cm_model_feature_dim(const struct Cl2cmModel *model);

// Sentence embedding of target-language tokens.
//
// # Safety
// `tokens` must hold `len` ids; `out` must hold `cl2cm_model_dim` doubles.
enum Cl2cmStatus cl2cm_model_encode_text(const struct Cl2cmModel *model,
                                         const size_t *tokens,
                                         size_t len,
                                         double *out);

// Vision embedding of one feature vector.
//
// # Safety
// `feature` must hold `len` doubles; `out` must hold `cl2cm_model_dim` doubles.
enum Cl2cmStatus cl2cm_model_encode_vision(const struct Cl2cmModel *model,
                                           const double *feature,
                                           size_t len,
                                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CL2CM_H */
