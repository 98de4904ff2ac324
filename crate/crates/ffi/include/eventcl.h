#ifndef EVENTCL_H
#define EVENTCL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by all functions.
 */
typedef enum EventclStatus {
  EVENTCL_STATUS_OK = 0,
  EVENTCL_STATUS_NULL_POINTER = 1,
  EVENTCL_STATUS_INVALID_UTF8 = 2,
  EVENTCL_STATUS_INVALID_INPUT = 3,
  EVENTCL_STATUS_IO = 4,
  EVENTCL_STATUS_CHECKPOINT = 5,
  EVENTCL_STATUS_NUMERIC = 6,
  EVENTCL_STATUS_BUFFER_TOO_SMALL = 7,
  EVENTCL_STATUS_PANIC = 8,
} EventclStatus;

/**
 * Opaque handle to a loaded model.
 */
typedef struct EventclModel EventclModel;

/**
 * One event as three NUL-terminated UTF-8 strings.
 */
typedef struct EventclEvent {
  const char *subject;
  const char *predicate;
  const char *object;
} EventclEvent;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL after a success.
 *
 * The pointer stays valid until the next eventcl call on the same thread.
 */
const char *eventcl_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *eventcl_version(void);

/**
 * Loads a checkpoint written by `eventcl train`. On success `*out` owns a
 * handle that must be released with [`eventcl_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum EventclStatus eventcl_model_load(const char *path, struct EventclModel **out);

/**
 * Releases a handle. NULL is accepted and ignored.
 *
 * # Safety
 * `model` must come from [`eventcl_model_load`] and not be used afterwards.
 */
void eventcl_model_free(struct EventclModel *model);

/**
 * Embedding width of the model, or 0 for a NULL handle.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t eventcl_model_dim(const struct EventclModel *model);

/**
 * Writes the unit-length embedding of `event` into `out[0..dim]`.
 *
 * # Safety
 * `out` must point to `out_len` writable doubles.
 */
enum EventclStatus eventcl_embed(const struct EventclModel *model,
                                 const struct EventclEvent *event_in,
                                 double *out,
                                 size_t out_len);

/**
 * Cosine similarity of two events under the model.
 *
 * # Safety
 * All pointers must be valid; `out` receives the result.
 */
enum EventclStatus eventcl_similarity(const struct EventclModel *model,
                                      const struct EventclEvent *a,
                                      const struct EventclEvent *b,
                                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVENTCL_H */
