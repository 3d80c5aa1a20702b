#ifndef DGCNN_H
#define DGCNN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum DgcnnStatus {
  DGCNN_STATUS_OK = 0,
  DGCNN_STATUS_NULL_POINTER = 1,
  /**
   * Bad argument value or configuration.
   */
  DGCNN_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Array sizes or feature widths do not fit the model.
   */
  DGCNN_STATUS_DIMENSION = 3,
  /**
   * Non-finite input or output.
   */
  DGCNN_STATUS_NUMERIC = 4,
  DGCNN_STATUS_IO = 5,
  /**
   * Checkpoint does not match the model.
   */
  DGCNN_STATUS_CHECKPOINT = 6,
  /**
   * Malformed data or configuration file.
   */
  DGCNN_STATUS_DATA = 7,
  /**
   * A Rust panic was caught at the boundary.
   */
  DGCNN_STATUS_PANIC = 8,
} DgcnnStatus;

/**
 * Opaque classifier handle.
 */
typedef struct DgcnnClassifier DgcnnClassifier;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dgcnn_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *dgcnn_last_error(void);

/**
 * Fresh classifier with the reduced desk-scale widths.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum DgcnnStatus dgcnn_classifier_new_desk(size_t num_classes,
                                           uint64_t seed,
                                           struct DgcnnClassifier **out);

/**
 * Classifier described by a run configuration file (for example the
 * `config.resolved.toml` written by `dgcnn train`) with weights read from
 * `checkpoint`. `checkpoint` may be NULL to keep the seeded initial weights.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string, `checkpoint` NULL or a
 * NUL-terminated string, and `out` valid for one handle.
 */
enum DgcnnStatus dgcnn_classifier_open(const char *config_path,
                                       const char *checkpoint,
                                       struct DgcnnClassifier **out);

/**
 * Replaces the handle's weights with a checkpoint of the same architecture.
 *
 * # Safety
 * `handle` must come from a constructor and not be freed; `path` must be
 * a NUL-terminated string.
 */
enum DgcnnStatus dgcnn_classifier_load(struct DgcnnClassifier *handle, const char *path);

/**
 * Writes the handle's weights as a checkpoint.
 *
 * # Safety
 * As for [`dgcnn_classifier_load`].
 */
enum DgcnnStatus dgcnn_classifier_save(const struct DgcnnClassifier *handle, const char *path);

/**
 * Number of logits per cloud; 0 for a NULL handle.
 *
 * # Safety
 * `handle` must be NULL or a live handle.
 */
size_t dgcnn_classifier_num_classes(const struct DgcnnClassifier *handle);

/**
 * Evaluation-mode logits of one cloud of `n` points with `dim` channels.
 * `out` receives `out_len` doubles, which must equal the class count.
 *
 * # Safety
 * `handle` must be live, `points` readable for `n·dim` doubles and `out`
 * writable for `out_len` doubles.
 */
enum DgcnnStatus dgcnn_classifier_logits(const struct DgcnnClassifier *handle,
                                         const double *points,
                                         size_t n,
                                         size_t dim,
                                         double *out,
                                         size_t out_len);

/**
 * Most likely class of one cloud.
 *
 * # Safety
 * As for [`dgcnn_classifier_logits`]; `class_out` writable for one value.
 */
enum DgcnnStatus dgcnn_classifier_predict(const struct DgcnnClassifier *handle,
                                          const double *points,
                                          size_t n,
                                          size_t dim,
                                          size_t *class_out);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `handle` must be NULL or a live handle, and is dangling afterwards.
 */
void dgcnn_classifier_free(struct DgcnnClassifier *handle);

/**
 * k nearest neighbours of every point by squared Euclidean distance, ties
 * to the lower index. Row `i` of `out` (length `n·k`) lists the neighbours
 * of point `i`, nearest first. With `self_loop` the point counts as its
 * own nearest neighbour.
 *
 * # Safety
 * `points` readable for `n·f` doubles, `out` writable for `out_len` values.
 */
enum DgcnnStatus dgcnn_knn_graph(const double *points,
                                 size_t n,
                                 size_t f,
                                 size_t k,
                                 bool self_loop,
                                 size_t *out,
                                 size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DGCNN_H */
