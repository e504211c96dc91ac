#ifndef OHNN_H
#define OHNN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OhnnStatus {
  OHNN_STATUS_OK = 0,
  OHNN_STATUS_NULL_POINTER = 1,
  OHNN_STATUS_INVALID_ARGUMENT = 2,
  OHNN_STATUS_IO = 3,
  OHNN_STATUS_FORMAT = 4,
  OHNN_STATUS_DIMENSION_MISMATCH = 5,
  OHNN_STATUS_INVALID_CONFIG = 6,
  OHNN_STATUS_NUMERICAL = 7,
  OHNN_STATUS_DATA_ERROR = 8,
  OHNN_STATUS_PANIC = 9,
} OhnnStatus;

/**
 * Trained anonymizer handle.
 */
typedef struct OhnnModel OhnnModel;

/**
 * Embedding pool handle.
 */
typedef struct OhnnPool OhnnPool;

typedef struct OhnnSyntheticSpec {
  size_t num_speakers;
  size_t utterances_per_speaker;
  size_t dim;
  double sigma_within;
  double sigma_between;
  uint64_t seed;
  bool normalize;
  size_t train_speakers;
  size_t enroll_per_speaker;
} OhnnSyntheticSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failing call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *ohnn_last_error(void);

struct OhnnSyntheticSpec ohnn_synthetic_spec_default(void);

/**
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum OhnnStatus ohnn_pool_generate(struct OhnnSyntheticSpec spec, struct OhnnPool **out);

/**
 * Loads an `EMB1` file (or CSV when the name ends in `.csv`).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum OhnnStatus ohnn_pool_load(const char *path, struct OhnnPool **out);

/**
 * # Safety
 * `pool` must be a live handle; `path` a NUL-terminated string.
 */
enum OhnnStatus ohnn_pool_save(const struct OhnnPool *pool, const char *path);

/**
 * # Safety
 * `pool` must be null or a handle not yet freed.
 */
void ohnn_pool_free(struct OhnnPool *pool);

/**
 * Embedding dimension, or 0 for a null handle.
 *
 * # Safety
 * `pool` must be null or a live handle.
 */
size_t ohnn_pool_dim(const struct OhnnPool *pool);

/**
 * Record count, or 0 for a null handle.
 *
 * # Safety
 * `pool` must be null or a live handle.
 */
size_t ohnn_pool_len(const struct OhnnPool *pool);

/**
 * Copies record `index`'s vector into `out[0..len]`; `len` must equal the dimension.
 *
 * # Safety
 * `pool` must be a live handle; `out` must hold `len` doubles.
 */
enum OhnnStatus ohnn_pool_vector(const struct OhnnPool *pool,
                                 size_t index,
                                 double *out,
                                 size_t len);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum OhnnStatus ohnn_model_load(const char *path, struct OhnnModel **out);

/**
 * Trains on `pool`. `config_toml` may be null (defaults) or a TOML document
 * in the experiment-config schema; its `stack` and `train` sections apply.
 *
 * # Safety
 * `pool` must be a live handle; `config_toml` null or NUL-terminated; `out` writable.
 */
enum OhnnStatus ohnn_model_train(const struct OhnnPool *pool,
                                 const char *config_toml,
                                 struct OhnnModel **out);

/**
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string.
 */
enum OhnnStatus ohnn_model_save(const struct OhnnModel *model, const char *path);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void ohnn_model_free(struct OhnnModel *model);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ohnn_model_dim(const struct OhnnModel *model);

/**
 * Anonymizes `x[0..len]` into `out[0..len]`; the buffers may alias.
 *
 * # Safety
 * `model` must be a live handle; `x` and `out` must hold `len` doubles.
 */
enum OhnnStatus ohnn_model_anonymize(const struct OhnnModel *model,
                                     const double *x,
                                     size_t len,
                                     double *out);

/**
 * Convex-hull equal error rate of two score lists.
 *
 * # Safety
 * Score pointers must hold the given counts; outputs must be writable.
 */
enum OhnnStatus ohnn_eer(const double *targets,
                         size_t num_targets,
                         const double *nontargets,
                         size_t num_nontargets,
                         double *out_eer,
                         double *out_threshold);

/**
 * # Safety
 * `a` and `b` must hold `len` doubles; `out` must be writable.
 */
enum OhnnStatus ohnn_cosine(const double *a, const double *b, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OHNN_H */
