#ifndef SCGRPO_H
#define SCGRPO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define SCGRPO_MODE_FULL 0

#define SCGRPO_MODE_ACCURACY_ONLY 1

#define SCGRPO_GATING_INDICATOR 0

#define SCGRPO_GATING_INDICATOR_AND_CORRECT 1

#define SCGRPO_PATTERN_NORMAL 0

#define SCGRPO_PATTERN_ABNORMAL 1

typedef enum ScgrpoStatus {
  SCGRPO_STATUS_OK = 0,
  SCGRPO_STATUS_NULL_POINTER = 1,
  SCGRPO_STATUS_INVALID_UTF8 = 2,
  SCGRPO_STATUS_INVALID_CONFIG = 3,
  SCGRPO_STATUS_INVALID_GROUND_TRUTH = 4,
  SCGRPO_STATUS_INVALID_ARGUMENT = 5,
  SCGRPO_STATUS_INTERNAL = 6,
} ScgrpoStatus;

/**
 * Opaque scoring engine.
 */
typedef struct ScgrpoEngine ScgrpoEngine;

/**
 * Reward components of one scored output. `parsed` is 1 when the output
 * follows one of the two tag patterns, else 0.
 */
typedef struct ScgrpoBreakdown {
  double r_con;
  double r_acc;
  double r_loc;
  double r_type;
  double total;
  int32_t parsed;
} ScgrpoBreakdown;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *scgrpo_version(void);

/**
 * Message for the last failure on this thread, or null if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *scgrpo_last_error_message(void);

/**
 * Creates an engine. `taxonomy` is the taxonomy file text, or null for the
 * built-in taxonomy.
 *
 * # Safety
 * `taxonomy` is null or a valid NUL-terminated string; `out` is a valid
 * pointer to writable storage.
 */
enum ScgrpoStatus scgrpo_engine_new(uint32_t grid,
                                    uint32_t mode,
                                    uint32_t gating,
                                    const char *taxonomy,
                                    struct ScgrpoEngine **out);

/**
 * Releases an engine. Null is ignored.
 *
 * # Safety
 * `engine` is null or a handle from [`scgrpo_engine_new`] not yet freed.
 */
void scgrpo_engine_free(struct ScgrpoEngine *engine);

/**
 * Scores `raw_output` against a JSON ground-truth object.
 *
 * # Safety
 * `engine` is a live handle; `raw_output` and `ground_truth_json` are valid
 * NUL-terminated strings; `out` points to writable storage.
 */
enum ScgrpoStatus scgrpo_engine_score(const struct ScgrpoEngine *engine,
                                      const char *raw_output,
                                      const char *ground_truth_json,
                                      struct ScgrpoBreakdown *out);

/**
 * Writes 1 to `out` if `raw_output` follows the given pattern, else 0.
 *
 * # Safety
 * `raw_output` is a valid NUL-terminated string; `out` points to writable
 * storage.
 */
enum ScgrpoStatus scgrpo_matches_pattern(const char *raw_output, uint32_t pattern, int32_t *out);

/**
 * Group-normalized advantages of `len` rewards, written to `out` (which may
 * alias `rewards`). All advantages are 0 when the group's standard deviation
 * is below `std_floor`.
 *
 * # Safety
 * `rewards` and `out` point to at least `len` doubles.
 */
enum ScgrpoStatus scgrpo_compute_advantages(const double *rewards,
                                            size_t len,
                                            double std_floor,
                                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCGRPO_H */
