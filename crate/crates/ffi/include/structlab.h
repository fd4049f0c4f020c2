#ifndef STRUCTLAB_H
#define STRUCTLAB_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every function.
 */
typedef enum StructlabStatus {
  STRUCTLAB_STATUS_OK = 0,
  /**
   * A required pointer was null or a string was not UTF-8.
   */
  STRUCTLAB_STATUS_NULL_ARGUMENT = 1,
  /**
   * Bad sizes, configuration or input values.
   */
  STRUCTLAB_STATUS_INVALID_INPUT = 2,
  /**
   * File access or parse failure.
   */
  STRUCTLAB_STATUS_IO = 3,
  /**
   * Missing or corrupt checkpoint.
   */
  STRUCTLAB_STATUS_CHECKPOINT = 4,
  /**
   * Non-finite values.
   */
  STRUCTLAB_STATUS_NUMERICAL = 5,
  /**
   * An output buffer is too small; the required length was written.
   */
  STRUCTLAB_STATUS_BUFFER_TOO_SMALL = 6,
  /**
   * Internal error.
   */
  STRUCTLAB_STATUS_PANIC = 7,
} StructlabStatus;

/**
 * Opaque model handle.
 */
typedef struct StructlabModel StructlabModel;

/**
 * Copies the last error of this thread into `buf` as a NUL-terminated
 * string, truncating to `len - 1` bytes. Returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t structlab_last_error(char *buf, size_t len);

/**
 * Loads a checkpoint; parameters are widened to 64-bit floats.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum StructlabStatus structlab_model_load(const char *path, struct StructlabModel **out);

/**
 * Releases a handle from [`structlab_model_load`]; null is ignored.
 *
 * # Safety
 * `model` must come from [`structlab_model_load`] and not be used afterwards.
 */
void structlab_model_free(struct StructlabModel *model);

/**
 * Vocabulary size including the reserved entries; 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t structlab_model_vocab_size(const struct StructlabModel *model);

/**
 * Parses one whitespace-tokenized sentence. Unknown words map to `<unk>`.
 *
 * `n_tokens` receives the sentence length. When `capacity` is smaller,
 * nothing else is written and `BufferTooSmall` is returned. Otherwise
 * `parents` gets `n` entries, `tau` gets `n - 1` and `delta` gets `n`;
 * `tau` and `delta` may be null.
 *
 * # Safety
 * Pointers must be valid for the sizes above.
 */
enum StructlabStatus structlab_parse(const struct StructlabModel *model,
                                     const char *sentence,
                                     size_t capacity,
                                     size_t *n_tokens,
                                     int64_t *parents,
                                     double *tau,
                                     double *delta);

/**
 * Dependencies of the joint parse of distances and heights:
 * `tau` has `n - 1` entries, `delta` and `parents` have `n`.
 *
 * # Safety
 * Pointers must be valid for the sizes above.
 */
enum StructlabStatus structlab_joint_parse(const double *tau,
                                           const double *delta,
                                           size_t n,
                                           int64_t *parents);

/**
 * Differentiable parent distribution as a row-major `n x n` matrix:
 * entry `(i, j)` is the probability that `j` is the parent of `i`.
 *
 * # Safety
 * `tau` has `n - 1` entries, `delta` has `n`, `out` has `n * n`.
 */
enum StructlabStatus structlab_parent_distribution(const double *tau,
                                                   const double *delta,
                                                   size_t n,
                                                   double mu1,
                                                   double mu2,
                                                   double *out);

#endif  /* STRUCTLAB_H */
