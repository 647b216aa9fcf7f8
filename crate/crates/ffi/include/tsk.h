#ifndef TSK_H
#define TSK_H

/* Generated by cbindgen from tsk-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum {
  /**
   * Success.
   */
  TSK_STATUS_OK = 0,
  /**
   * Null pointer or otherwise invalid argument.
   */
  TSK_STATUS_INVALID_ARGUMENT = 1,
  /**
   * File could not be read or written.
   */
  TSK_STATUS_IO = 2,
  /**
   * Malformed file contents or incompatible configuration.
   */
  TSK_STATUS_INVALID = 3,
  /**
   * Numerical or shape failure during a forward pass.
   */
  TSK_STATUS_COMPUTE = 4,
} TskStatus;

/**
 * Opaque feature-sequence handle.
 */
typedef struct TskFeatures TskFeatures;

/**
 * Opaque model handle.
 */
typedef struct TskModel TskModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns the last error message for this thread, or NULL when no error
 * has occurred. The pointer stays valid until the next failing call on the
 * same thread.
 */
const char *tsk_last_error(void);

/**
 * Reads a TSKF feature file into a new handle stored in `out`.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string, `out` a valid pointer.
 */
TskStatus tsk_features_read(const char *path, TskFeatures **out);

/**
 * Returns the dimensions of a feature sequence.
 *
 * # Safety
 * All pointers must be valid; `features` must come from `tsk_features_read`.
 */
TskStatus tsk_features_dims(const TskFeatures *features, uintptr_t *t, uintptr_t *d);

/**
 * Frees a feature handle. NULL is a no-op.
 *
 * # Safety
 * `features` must be NULL or an unfreed pointer from `tsk_features_read`.
 */
void tsk_features_free(TskFeatures *features);

/**
 * Loads a TSKM checkpoint into a new model handle stored in `out`.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string, `out` a valid pointer.
 */
TskStatus tsk_model_load(const char *path, TskModel **out);

/**
 * Creates a freshly initialized model from a JSON head config (the same
 * schema stored inside TSKM checkpoints) and a seed.
 *
 * # Safety
 * `config_json` must be a NUL-terminated UTF-8 string, `out` valid.
 */
TskStatus tsk_model_new(const char *config_json, uint64_t seed, TskModel **out);

/**
 * Saves a model to a TSKM checkpoint file.
 *
 * # Safety
 * `model` must be a live handle, `path` a NUL-terminated UTF-8 string.
 */
TskStatus tsk_model_save(const TskModel *model, const char *path);

/**
 * Total number of learnable parameters of a model.
 *
 * # Safety
 * All pointers must be valid.
 */
TskStatus tsk_model_param_count(const TskModel *model, uintptr_t *out);

/**
 * Number of output values of a forward pass over `t` frames: C for
 * segmented heads, T*C for continuous heads.
 *
 * # Safety
 * All pointers must be valid.
 */
TskStatus tsk_model_output_len(const TskModel *model, uintptr_t t, uintptr_t *out);

/**
 * Runs a forward pass and writes the raw logits into `out`, which must
 * hold `tsk_model_output_len(model, features.t)` values.
 *
 * # Safety
 * All pointers must be valid; `out` must point at `out_len` f64 slots.
 */
TskStatus tsk_model_forward(const TskModel *model,
                            const TskFeatures *features,
                            double *out,
                            uintptr_t out_len);

/**
 * Frees a model handle. NULL is a no-op.
 *
 * # Safety
 * `model` must be NULL or an unfreed pointer from a model constructor.
 */
void tsk_model_free(TskModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TSK_H */
