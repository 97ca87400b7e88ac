#ifndef TEGAAREC_H
#define TEGAAREC_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes. 2, 3 and 4 match the command-line exit codes.
typedef enum TegaaStatus {
  TEGAA_STATUS_OK = 0,
  TEGAA_STATUS_NULL_ARGUMENT = 1,
  TEGAA_STATUS_USER_ERROR = 2,
  TEGAA_STATUS_DATA_ERROR = 3,
  TEGAA_STATUS_NUMERIC_ERROR = 4,
  TEGAA_STATUS_BUFFER_TOO_SMALL = 5,
  TEGAA_STATUS_PANIC = 99,
} TegaaStatus;

// Opaque handle to a loaded workdir and model.
typedef struct TegaaRecommender TegaaRecommender;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *tegaarec_version(void);

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next call into this library on the same thread.
const char *tegaarec_last_error(void);

// Opens a trained workdir. On success `*out` owns a handle that must be
// released with [`tegaarec_free`].
//
// # Safety
// `workdir` must be a NUL-terminated string and `out` a valid pointer.
enum TegaaStatus tegaarec_open(const char *workdir, struct TegaaRecommender **out);

// Ranks the catalogue for the item after `items`. `context` items only
// influence neighbour mining and may be null when `context_len` is 0.
//
// Writes up to `capacity` results in rank order into `out_items` (raw item
// ids) and `out_scores`, and the number written into `*out_len`. Fewer than
// `k` rows are returned when the catalogue is smaller than `k`; a `capacity`
// below that count is [`TegaaStatus::BufferTooSmall`] with `*out_len` set to
// the required size.
//
// # Safety
// `handle` must come from [`tegaarec_open`]. Array pointers must be valid for
// the given lengths; `out_scores` may be null.
enum TegaaStatus tegaarec_recommend(const struct TegaaRecommender *handle,
                                    uint64_t user,
                                    const uint64_t *items,
                                    uintptr_t items_len,
                                    const uint64_t *context,
                                    uintptr_t context_len,
                                    uintptr_t k,
                                    uint64_t *out_items,
                                    double *out_scores,
                                    uintptr_t capacity,
                                    uintptr_t *out_len);

// Releases a handle. Null is ignored.
//
// # Safety
// `handle` must come from [`tegaarec_open`] and not be used afterwards.
void tegaarec_free(struct TegaaRecommender *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TEGAAREC_H */
