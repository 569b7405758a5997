#ifndef EDGECL_H
#define EDGECL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every exported call.
 */
typedef enum EdgeclStatus {
  EDGECL_STATUS_OK = 0,
  EDGECL_STATUS_NULL_POINTER = 1,
  EDGECL_STATUS_INVALID_ARGUMENT = 2,
  EDGECL_STATUS_DIMENSION = 3,
  EDGECL_STATUS_CONFIG = 4,
  EDGECL_STATUS_STATE = 5,
  EDGECL_STATUS_NUMERIC = 6,
  EDGECL_STATUS_IO = 7,
  EDGECL_STATUS_FORMAT = 8,
  EDGECL_STATUS_CANCELLED = 9,
  EDGECL_STATUS_PANIC = 10,
} EdgeclStatus;

/**
 * Opaque engine: one strategy's learner plus its experience counter.
 */
typedef struct EdgeclEngine EdgeclEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *edgecl_last_error(void);

/**
 * Builds an engine for `seed` from a JSON run configuration (null or empty
 * selects the defaults): generates the synthetic dataset, pretrains the
 * initial model and sets up strategy number `strategy_index`.
 *
 * # Safety
 * `config_json` must be null or a NUL-terminated string; `out` must be a
 * valid pointer.
 */
enum EdgeclStatus edgecl_engine_new(const char *config_json,
                                    uint64_t seed,
                                    size_t strategy_index,
                                    struct EdgeclEngine **out);

/**
 * Releases an engine. Null is ignored.
 *
 * # Safety
 * `engine` must be null or a handle from [`edgecl_engine_new`] that has
 * not been freed.
 */
void edgecl_engine_free(struct EdgeclEngine *engine);

/**
 * Writes the frame shape (channels, height, width) and class count.
 *
 * # Safety
 * All pointers must be valid.
 */
enum EdgeclStatus edgecl_engine_shape(struct EdgeclEngine *engine,
                                      size_t *channels,
                                      size_t *height,
                                      size_t *width,
                                      size_t *classes);

/**
 * Trains on one experience: `count` frames of class `label`, laid out
 * frame-major in channel, row, column order.
 *
 * # Safety
 * `frames` must point to `count * C * H * W` floats.
 */
enum EdgeclStatus edgecl_engine_train(struct EdgeclEngine *engine,
                                      const float *frames,
                                      size_t count,
                                      size_t label);

/**
 * Writes one top-1 label per frame into `labels`.
 *
 * # Safety
 * `frames` must point to `count * C * H * W` floats and `labels` to room
 * for `count` values.
 */
enum EdgeclStatus edgecl_engine_predict(struct EdgeclEngine *engine,
                                        const float *frames,
                                        size_t count,
                                        size_t *labels);

/**
 * Storage of the replay buffer's latent patterns in bytes (0 without a
 * buffer).
 *
 * # Safety
 * `out` must be valid.
 */
enum EdgeclStatus edgecl_engine_buffer_bytes(struct EdgeclEngine *engine, size_t *out);

/**
 * Saves the replay buffer to `path`.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
enum EdgeclStatus edgecl_engine_save_buffer(struct EdgeclEngine *engine, const char *path);

/**
 * Library version as a static NUL-terminated string.
 */
const char *edgecl_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EDGECL_H */
