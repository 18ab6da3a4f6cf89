#ifndef CORRMARK_H
#define CORRMARK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CmStatus {
  CM_STATUS_OK = 0,
  CM_STATUS_NULL_POINTER = 1,
  CM_STATUS_INVALID_UTF8 = 2,
  /**
   * Bad argument or configuration.
   */
  CM_STATUS_INVALID_ARGUMENT = 3,
  /**
   * Unreadable or inconsistent input data.
   */
  CM_STATUS_DATA = 4,
  CM_STATUS_BACKEND = 5,
  CM_STATUS_BUDGET = 6,
  CM_STATUS_BUFFER_TOO_SMALL = 7,
  CM_STATUS_PANIC = 8,
} CmStatus;

typedef enum CmMaskFormat {
  /**
   * Directory of indexed PNG masks.
   */
  CM_MASK_FORMAT_INDEXED_PNG = 0,
  /**
   * Single RLE JSON file.
   */
  CM_MASK_FORMAT_RLE_JSON = 1,
} CmMaskFormat;

typedef enum CmTier {
  CM_TIER_MARKERS_ONLY = 0,
  CM_TIER_MARKERS_PLUS_OUTLINE = 1,
  CM_TIER_MARKERS_PLUS_MASK = 2,
} CmTier;

/**
 * A selection and placement plan for one sequence.
 */
typedef struct CmPlan CmPlan;

/**
 * Frames and aligned instance masks.
 */
typedef struct CmSequence CmSequence;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the next
 * failing call on the same thread; do not free.
 */
const char *cm_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void cm_string_free(char *s);

/**
 * Writes the `m` retained frame indices of an `n`-frame sequence into `out`,
 * which must hold at least `capacity` entries; `*out_len` receives the count.
 *
 * # Safety
 * `out` must point to `capacity` writable `size_t` values.
 */
enum CmStatus cm_sparsify(size_t n, size_t m, size_t *out, size_t capacity, size_t *out_len);

/**
 * Loads a frame directory and its masks.
 *
 * # Safety
 * Paths must be nul-terminated; `out` must be writable.
 */
enum CmStatus cm_sequence_load(const char *frames_dir,
                               const char *masks_path,
                               enum CmMaskFormat format,
                               struct CmSequence **out);

/**
 * Number of frames, or 0 for null.
 *
 * # Safety
 * `seq` must be null or a live handle.
 */
size_t cm_sequence_len(const struct CmSequence *seq);

/**
 * # Safety
 * `seq` must be null or a handle from [`cm_sequence_load`], freed once.
 */
void cm_sequence_free(struct CmSequence *seq);

/**
 * Builds a plan retaining `m` frames and marking up to `k` tracklets.
 *
 * # Safety
 * `seq` must be a live handle; `out` must be writable.
 */
enum CmStatus cm_plan_build(const struct CmSequence *seq,
                            size_t m,
                            size_t k,
                            uint32_t diameter_px,
                            enum CmTier tier,
                            struct CmPlan **out);

/**
 * Number of tracklets the plan marks, or 0 for null.
 *
 * # Safety
 * `plan` must be null or a live handle.
 */
size_t cm_plan_k_effective(const struct CmPlan *plan);

/**
 * Serializes the plan as JSON into a new string.
 *
 * # Safety
 * `plan` must be a live handle; `out` must be writable.
 */
enum CmStatus cm_plan_to_json(const struct CmPlan *plan, char **out);

/**
 * # Safety
 * `plan` must be null or a handle from [`cm_plan_build`], freed once.
 */
void cm_plan_free(struct CmPlan *plan);

/**
 * Renders the plan's retained frames and writes marked PNGs plus
 * `manifest.json` into `out_dir`. `threads` of 0 uses one worker.
 *
 * # Safety
 * Handles must be live and belong together; `out_dir` must be nul-terminated.
 */
enum CmStatus cm_render_to_dir(const struct CmSequence *seq,
                               const struct CmPlan *plan,
                               const char *out_dir,
                               size_t threads);

/**
 * Scores candidates against references. Inputs are JSON: a list of strings
 * and a list of reference lists. The report is written as JSON into `out`.
 *
 * # Safety
 * Inputs must be nul-terminated; `out` must be writable.
 */
enum CmStatus cm_metrics_json(const char *candidates_json, const char *references_json, char **out);

/**
 * Harmonic mean of two non-negative scores; 0 when both are 0.
 */
double cm_harmonic_mean(double a, double b);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CORRMARK_H */
