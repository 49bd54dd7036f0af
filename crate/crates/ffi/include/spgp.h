#ifndef SPGP_H
#define SPGP_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum SpgpStatus {
  SPGP_STATUS_OK = 0,
  SPGP_STATUS_NULL_POINTER = 1,
  SPGP_STATUS_INVALID_ARGUMENT = 2,
  SPGP_STATUS_IO = 3,
  SPGP_STATUS_FORMAT = 4,
  SPGP_STATUS_VERSION = 5,
  SPGP_STATUS_TRUNCATED = 6,
  SPGP_STATUS_CHECKSUM = 7,
  SPGP_STATUS_DATA = 8,
  SPGP_STATUS_SHAPE = 9,
  SPGP_STATUS_DEGENERATE_MASK = 10,
  SPGP_STATUS_NO_PARAMETERS = 11,
  SPGP_STATUS_CONDITIONING = 12,
  SPGP_STATUS_TRAINING = 13,
  SPGP_STATUS_CONFIG = 14,
  SPGP_STATUS_PANIC = 15,
} SpgpStatus;

typedef enum SpgpMaskVariant {
  SPGP_MASK_VARIANT_MEAN = 0,
  SPGP_MASK_VARIANT_SOFTMAX = 1,
  SPGP_MASK_VARIANT_SIGMOID = 2,
  SPGP_MASK_VARIANT_PRIOR = 3,
} SpgpMaskVariant;

typedef enum SpgpKernel {
  SPGP_KERNEL_MATERN32 = 0,
  SPGP_KERNEL_MATERN52 = 1,
} SpgpKernel;

/**
 * Opaque trained model.
 */
typedef struct SpgpModel SpgpModel;

/**
 * Opaque embedding tensor.
 */
typedef struct SpgpTensor SpgpTensor;

/**
 * Training options. Obtain defaults from [`spgp_train_options_default`].
 */
typedef struct SpgpTrainOptions {
  enum SpgpMaskVariant variant;
  enum SpgpKernel kernel;
  double prior_scale;
  size_t max_iters;
  size_t restarts;
  uint64_t seed;
  bool standardize;
} SpgpTrainOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failed call on this thread, or null. The
 * pointer stays valid until the next call into the library on this thread.
 */
const char *spgp_last_error(void);

/**
 * Static, nul-terminated library version string.
 */
const char *spgp_version(void);

/**
 * Builds a tensor from `n * p * m` row-major values (`[seq][pos][dim]`).
 *
 * # Safety
 * `values` must point to `n * p * m` readable doubles and `out` must be
 * writable.
 */
enum SpgpStatus spgp_tensor_new(size_t n,
                                size_t p,
                                size_t m,
                                const double *values,
                                struct SpgpTensor **out);

/**
 * # Safety
 * `path` must be a nul-terminated string and `out` must be writable.
 */
enum SpgpStatus spgp_tensor_read(const char *path, struct SpgpTensor **out);

/**
 * # Safety
 * `tensor` must come from this library; `path` must be nul-terminated.
 */
enum SpgpStatus spgp_tensor_write(const struct SpgpTensor *tensor, const char *path);

/**
 * # Safety
 * `tensor` must come from this library; the output pointers must be
 * writable.
 */
enum SpgpStatus spgp_tensor_dims(const struct SpgpTensor *tensor, size_t *n, size_t *p, size_t *m);

/**
 * # Safety
 * `tensor` must be null or a pointer returned by this library that has not
 * been freed yet.
 */
void spgp_tensor_free(struct SpgpTensor *tensor);

struct SpgpTrainOptions spgp_train_options_default(void);

/**
 * Fits a model on `tensor` with one target per sequence.
 *
 * # Safety
 * `tensor` must come from this library, `targets` must point to
 * `n_targets` doubles, `options` may be null for defaults, and `out` must
 * be writable.
 */
enum SpgpStatus spgp_model_fit(const struct SpgpTensor *tensor,
                               const double *targets,
                               size_t n_targets,
                               const struct SpgpTrainOptions *options,
                               struct SpgpModel **out);

/**
 * # Safety
 * `path` must be nul-terminated and `out` writable.
 */
enum SpgpStatus spgp_model_load(const char *path, struct SpgpModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be nul-terminated.
 */
enum SpgpStatus spgp_model_save(const struct SpgpModel *model, const char *path);

/**
 * # Safety
 * `model` must be null or a live pointer returned by this library.
 */
void spgp_model_free(struct SpgpModel *model);

/**
 * Writes the posterior mean and variance for each sequence of `tensor`
 * into `mean` and `variance`, both of length `len` (the sequence count).
 *
 * # Safety
 * Pointers must come from this library or point to `len` writable doubles.
 */
enum SpgpStatus spgp_model_predict(const struct SpgpModel *model,
                                   const struct SpgpTensor *tensor,
                                   double *mean,
                                   double *variance,
                                   size_t len);

/**
 * Writes `[log sigma_f^2, log sigma_l, log sigma_eps^2]` into `out`.
 *
 * # Safety
 * `model` must come from this library; `out` must hold three doubles.
 */
enum SpgpStatus spgp_model_hypers(const struct SpgpModel *model, double *out);

/**
 * Number of sequence positions the model was trained on.
 *
 * # Safety
 * `model` must come from this library; `out` must be writable.
 */
enum SpgpStatus spgp_model_positions(const struct SpgpModel *model, size_t *out);

/**
 * Normalized pooling weights, `len` must equal the position count.
 *
 * # Safety
 * `model` must come from this library; `out` must hold `len` doubles.
 */
enum SpgpStatus spgp_model_weights(const struct SpgpModel *model, double *out, size_t len);

/**
 * Counts normalized weights strictly below `threshold`.
 *
 * # Safety
 * `model` must come from this library; `out` must be writable.
 */
enum SpgpStatus spgp_model_sparsity(const struct SpgpModel *model, double threshold, size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPGP_H */
