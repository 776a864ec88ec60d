/* milab C API — generated by cbindgen, do not edit. */

#ifndef MILAB_H
#define MILAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible API call.
typedef enum MilabStatus {
  MILAB_STATUS_OK = 0,
  // Null pointer, bad dimension, or otherwise malformed argument.
  MILAB_STATUS_INVALID_ARGUMENT = 1,
  // Filesystem failure while reading a checkpoint.
  MILAB_STATUS_IO = 2,
  // The file is not a valid checkpoint of a supported version.
  MILAB_STATUS_FORMAT = 3,
  // The operation requires an additive-composition model.
  MILAB_STATUS_COMPOSITION = 4,
  // NaN or other numeric failure during evaluation.
  MILAB_STATUS_NUMERIC = 5,
  // Unexpected internal failure (including caught panics).
  MILAB_STATUS_INTERNAL = 6,
} MilabStatus;

// Opaque handle to a loaded MIL model.
typedef struct MilabModel MilabModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread. The pointer
// stays valid until the next milab call on the same thread.
const char *milab_last_error(void);

// Library version as a static NUL-terminated string.
const char *milab_version(void);

// Load a model checkpoint from `path` into a fresh handle. On success
// writes the handle to `out_model`; free it with `milab_model_free`.
//
// # Safety
// `path` must be a valid NUL-terminated string and `out_model` a valid
// pointer to writable storage for one pointer.
enum MilabStatus milab_model_load(const char *path, struct MilabModel **out_model);

// Release a handle returned by `milab_model_load`. Null is a no-op.
//
// # Safety
// `model` must be null or a pointer previously returned by
// `milab_model_load` that has not been freed.
void milab_model_free(struct MilabModel *model);

// Number of classes the model predicts, or -1 on a null handle.
//
// # Safety
// `model` must be null or a live handle.
int32_t milab_model_num_classes(const struct MilabModel *model);

// Instance feature dimension the model expects, or -1 on a null handle.
//
// # Safety
// `model` must be null or a live handle.
int32_t milab_model_input_dim(const struct MilabModel *model);

// 1 if the model uses the additive composition (contributions
// available), 0 if joint, -1 on a null handle.
//
// # Safety
// `model` must be null or a live handle.
int32_t milab_model_is_additive(const struct MilabModel *model);

// Run one bag through the model.
//
// `instances` holds `num_instances * dim` doubles, row-major. `logits_out`
// receives `num_classes` values. `attention_out` may be null; otherwise it
// receives `num_instances` attention weights (uniform under mean pooling).
//
// # Safety
// `model` must be a live handle; buffers must be valid for the documented
// lengths.
enum MilabStatus milab_model_forward(const struct MilabModel *model,
                                     const double *instances,
                                     size_t num_instances,
                                     size_t dim,
                                     double *logits_out,
                                     double *attention_out);

// Extract raw per-class per-instance contributions from an additive
// model. `contributions_out` receives `num_classes * num_instances`
// doubles, row-major with one row per class; row sums equal the logits.
// Joint models yield `MILAB_STATUS_COMPOSITION`.
//
// # Safety
// `model` must be a live handle; buffers must be valid for the documented
// lengths.
enum MilabStatus milab_model_contributions(const struct MilabModel *model,
                                           const double *instances,
                                           size_t num_instances,
                                           size_t dim,
                                           double *contributions_out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* MILAB_H */
