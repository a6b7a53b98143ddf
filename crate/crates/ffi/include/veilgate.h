#ifndef VEILGATE_H
#define VEILGATE_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VgStatus {
  VG_STATUS_OK = 0,
  VG_STATUS_NULL_ARGUMENT = 1,
  VG_STATUS_INVALID_UTF8 = 2,
  VG_STATUS_INVALID_ARGUMENT = 3,
  VG_STATUS_NOT_FOUND = 4,
  VG_STATUS_IO = 5,
  VG_STATUS_CORRUPT = 6,
  VG_STATUS_PLACEHOLDER_IN_INPUT = 7,
  VG_STATUS_STORE = 8,
  VG_STATUS_PANIC = 9,
} VgStatus;

/**
 * Which text-overlap metric [`vg_text_metric`] computes.
 */
typedef enum VgTextMetric {
  VG_TEXT_METRIC_BLEU1 = 1,
  VG_TEXT_METRIC_BLEU2 = 2,
  VG_TEXT_METRIC_METEOR = 3,
  VG_TEXT_METRIC_ROUGE_L = 4,
} VgTextMetric;

/**
 * Opaque handle to a mapping store.
 */
typedef struct VgStore VgStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the next call.
 */
const char *vg_last_error(void);

/**
 * Library version as a static string.
 */
const char *vg_version(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void vg_string_free(char *s);

/**
 * Opens (or creates) a persistent store in `dir`; a null `dir` gives an in-memory store.
 *
 * # Safety
 * `dir` must be null or a valid string; `out` must be writable.
 */
enum VgStatus vg_store_open(const char *dir, struct VgStore **out);

/**
 * # Safety
 * `store` must be null or a handle from [`vg_store_open`] not yet freed.
 */
void vg_store_free(struct VgStore *store);

/**
 * Masks `text` for `user_id` with typed placeholders.
 *
 * `items_json` is a JSON array of `{original_text, privacy_type, privacy_level}`;
 * when null the built-in pattern extractor runs (using `real_name` if given).
 * `mask_level` is 2, 3 or 4. The result is the sanitized record as JSON.
 *
 * # Safety
 * Pointer arguments must be valid strings (nullable ones may be null); `out_json` must be writable.
 */
enum VgStatus vg_sanitize(const struct VgStore *store,
                          const char *user_id,
                          const char *text,
                          const char *items_json,
                          const char *real_name,
                          uint32_t mask_level,
                          char **out_json);

/**
 * Replaces `user_id`'s placeholders in `text`. The result is the restored
 * text; `out_unresolved` (nullable) receives the count of placeholders left as-is.
 *
 * # Safety
 * Pointer arguments must be valid; `out_text` must be writable.
 */
enum VgStatus vg_restore(const struct VgStore *store,
                         const char *user_id,
                         const char *text,
                         char **out_text,
                         size_t *out_unresolved);

/**
 * Original value of one placeholder; `VG_STATUS_NOT_FOUND` when unknown.
 *
 * # Safety
 * Pointer arguments must be valid; `out_value` must be writable.
 */
enum VgStatus vg_lookup(const struct VgStore *store,
                        const char *user_id,
                        const char *placeholder,
                        char **out_value);

/**
 * Number of mappings held for `user_id`.
 *
 * # Safety
 * Pointer arguments must be valid.
 */
enum VgStatus vg_mapping_count(const struct VgStore *store, const char *user_id, size_t *out_count);

/**
 * Deletes every mapping of `user_id`; `out_deleted` (nullable) receives how many.
 *
 * # Safety
 * Pointer arguments must be valid.
 */
enum VgStatus vg_delete_user(const struct VgStore *store, const char *user_id, size_t *out_deleted);

/**
 * Compacts the store's log.
 *
 * # Safety
 * `store` must be a valid handle.
 */
enum VgStatus vg_compact(const struct VgStore *store);

/**
 * Scores predicted items against gold items (both JSON arrays) and returns
 * `{precision, recall, f1, ...}` as JSON.
 *
 * # Safety
 * Pointer arguments must be valid; `out_json` must be writable.
 */
enum VgStatus vg_score_extraction(const char *pred_json, const char *gold_json, char **out_json);

/**
 * Scores `candidate` against `reference` after the library's tokenization.
 *
 * # Safety
 * Pointer arguments must be valid; `out` must be writable.
 */
enum VgStatus vg_text_metric(enum VgTextMetric metric,
                             const char *candidate,
                             const char *reference,
                             double *out);

/**
 * Writes the group-normalized `rewards[0..len]` into `out[0..len]`.
 *
 * # Safety
 * `rewards` and `out` must point to `len` doubles each.
 */
enum VgStatus vg_group_normalize(const double *rewards, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VEILGATE_H */
