#ifndef OPTSKILLS_H
#define OPTSKILLS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OptskillsStatus {
  OPTSKILLS_STATUS_OK = 0,
  OPTSKILLS_STATUS_NULL_ARGUMENT = 1,
  OPTSKILLS_STATUS_INVALID_UTF8 = 2,
  OPTSKILLS_STATUS_INVALID_ARGUMENT = 3,
  OPTSKILLS_STATUS_INVALID_DOCUMENT = 4,
  OPTSKILLS_STATUS_NOT_FOUND = 5,
  OPTSKILLS_STATUS_IO = 6,
  OPTSKILLS_STATUS_CORRUPT_LIBRARY = 7,
  OPTSKILLS_STATUS_PANIC = 8,
} OptskillsStatus;

/**
 * Opaque skill library.
 */
typedef struct OptskillsLibrary OptskillsLibrary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call on the same thread; do not free it.
 */
const char *optskills_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and must not be freed twice.
 */
void optskills_string_free(char *s);

/**
 * Writes `Norm(alpha * w + (1 - alpha) * v)` into `out` (length `len`).
 *
 * # Safety
 * `w`, `v` and `out` must each point to `len` doubles.
 */
enum OptskillsStatus optskills_fuse(const double *w,
                                    const double *v,
                                    size_t len,
                                    double alpha,
                                    double *out);

/**
 * # Safety
 * `a` and `b` must point to `len` doubles; `out` to one double.
 */
enum OptskillsStatus optskills_cosine_distance(const double *a,
                                               const double *b,
                                               size_t len,
                                               double *out);

/**
 * DBSCAN under cosine distance over `n` row-major points of dimension
 * `dim`. Writes one label per point into `labels`; noise is -1.
 *
 * # Safety
 * `points` must hold `n * dim` doubles and `labels` room for `n` values.
 */
enum OptskillsStatus optskills_dbscan(const double *points,
                                      size_t n,
                                      size_t dim,
                                      double epsilon,
                                      size_t min_samples,
                                      int64_t *labels);

/**
 * # Safety
 * `pred` and `truth` must point to `n` labels; `out` to one double.
 */
enum OptskillsStatus optskills_adjusted_rand_index(const int64_t *pred,
                                                   const int64_t *truth,
                                                   size_t n,
                                                   double *out);

/**
 * # Safety
 * `pred` and `truth` must point to `n` labels; `out` to one double.
 */
enum OptskillsStatus optskills_pairwise_f1(const int64_t *pred,
                                           const int64_t *truth,
                                           size_t n,
                                           double *out);

/**
 * `|pred - truth| <= max(absolute, relative * |truth|)`.
 *
 * # Safety
 * `out` must point to one bool.
 */
enum OptskillsStatus optskills_answers_match(double pred,
                                             double truth,
                                             double absolute,
                                             double relative,
                                             bool *out);

/**
 * Value of the last `RESULT:` line; `found` is false when there is none.
 *
 * # Safety
 * `stdout_text` must be a NUL-terminated string; `value` and `found` must
 * be writable.
 */
enum OptskillsStatus optskills_parse_result_line(const char *stdout_text,
                                                 double *value,
                                                 bool *found);

/**
 * Checks a skill document against the required template. Returns
 * `InvalidDocument` with every problem in the last-error message.
 *
 * # Safety
 * `document` must be a NUL-terminated string.
 */
enum OptskillsStatus optskills_validate_skill(const char *document);

/**
 * New empty library. Release with [`optskills_library_free`].
 */
struct OptskillsLibrary *optskills_library_new(void);

/**
 * Loads a persisted library directory into `*out`.
 *
 * # Safety
 * `dir` must be a NUL-terminated path; `out` must be writable.
 */
enum OptskillsStatus optskills_library_load(const char *dir, struct OptskillsLibrary **out);

/**
 * # Safety
 * `lib` must be a live handle; `dir` a NUL-terminated path.
 */
enum OptskillsStatus optskills_library_save(const struct OptskillsLibrary *lib, const char *dir);

/**
 * # Safety
 * `lib` must be null or a handle from this library, freed at most once.
 */
void optskills_library_free(struct OptskillsLibrary *lib);

/**
 * Number of skills; 0 for a null handle.
 *
 * # Safety
 * `lib` must be null or a live handle.
 */
size_t optskills_library_len(const struct OptskillsLibrary *lib);

/**
 * Library version (number of committed updates); 0 for a null handle.
 *
 * # Safety
 * `lib` must be null or a live handle.
 */
uint64_t optskills_library_version(const struct OptskillsLibrary *lib);

/**
 * Id of the `index`-th skill in id order.
 *
 * # Safety
 * `lib` must be a live handle; `out` must be writable.
 */
enum OptskillsStatus optskills_library_skill_id(const struct OptskillsLibrary *lib,
                                                size_t index,
                                                char **out);

/**
 * Full markdown of the skill with id `skill_id`.
 *
 * # Safety
 * `lib` must be a live handle, `skill_id` a NUL-terminated string and
 * `out` writable.
 */
enum OptskillsStatus optskills_library_document(const struct OptskillsLibrary *lib,
                                                const char *skill_id,
                                                char **out);

/**
 * Validates `document` and adds it as a new skill; the assigned id is
 * written to `*id_out`. `provenance` may be null.
 *
 * # Safety
 * `lib` must be a live handle; string arguments NUL-terminated (or null
 * where allowed); `id_out` writable.
 */
enum OptskillsStatus optskills_library_insert(struct OptskillsLibrary *lib,
                                              const char *document,
                                              const char *timestamp,
                                              const char *provenance,
                                              char **id_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OPTSKILLS_H */
