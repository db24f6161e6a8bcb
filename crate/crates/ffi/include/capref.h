/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef CAPREF_H
#define CAPREF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CaprefStatus {
  CAPREF_STATUS_OK = 0,
  CAPREF_STATUS_NULL_POINTER = 1,
  CAPREF_STATUS_INVALID_UTF8 = 2,
  CAPREF_STATUS_INVALID_ARGUMENT = 3,
  CAPREF_STATUS_COMPUTE_ERROR = 4,
  CAPREF_STATUS_PANIC = 5,
} CaprefStatus;

/**
 * Opaque collection of (candidate, references) items.
 */
typedef struct CaprefEvalSet CaprefEvalSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call into the library on the same thread.
 */
const char *capref_last_error(void);

/**
 * Library version as a static string.
 */
const char *capref_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void capref_string_free(char *s);

struct CaprefEvalSet *capref_eval_set_new(void);

/**
 * # Safety
 * `set` must come from [`capref_eval_set_new`] and not have been freed.
 */
void capref_eval_set_free(struct CaprefEvalSet *set);

/**
 * Adds one item. Fails on a repeated `image_id` or when `n_refs` is 0.
 *
 * # Safety
 * All strings must be nul-terminated; `refs` must point to `n_refs` of them.
 */
enum CaprefStatus capref_eval_set_add_item(struct CaprefEvalSet *set,
                                           const char *image_id,
                                           const char *candidate,
                                           const char *const *refs,
                                           size_t n_refs);

/**
 * # Safety
 * `set` must be a live handle.
 */
enum CaprefStatus capref_eval_set_len(const struct CaprefEvalSet *set, size_t *len);

/**
 * Corpus BLEU-4 on the 0 to 100 scale.
 *
 * # Safety
 * `set` must be a live handle; `result` must be writable.
 */
enum CaprefStatus capref_bleu4(const struct CaprefEvalSet *set, double *result);

/**
 * CIDEr-D on its raw 0 to 10 scale. Needs at least two items.
 *
 * # Safety
 * `set` must be a live handle; `result` must be writable.
 */
enum CaprefStatus capref_cider_d(const struct CaprefEvalSet *set, double *result);

/**
 * Word-level edit distance between two captions after tokenization.
 *
 * # Safety
 * `a` and `b` must be nul-terminated; `result` must be writable.
 */
enum CaprefStatus capref_levenshtein_words(const char *a, const char *b, size_t *result);

/**
 * Two-sided exact sign test p-value.
 *
 * # Safety
 * `result` must be writable.
 */
enum CaprefStatus capref_sign_test(uint64_t wins_a, uint64_t wins_b, double *result);

/**
 * Cohen's kappa between two raters' category codes.
 *
 * # Safety
 * `a` and `b` must each point to `n` values; `result` must be writable.
 */
enum CaprefStatus capref_cohen_kappa(const uint32_t *a,
                                     const uint32_t *b,
                                     size_t n,
                                     double *result);

/**
 * Fleiss' kappa over a row-major `items x categories` count table whose
 * rows each sum to `raters`.
 *
 * # Safety
 * `table` must point to `items * categories` values; `result` must be
 * writable.
 */
enum CaprefStatus capref_fleiss_kappa(const size_t *table,
                                      size_t items,
                                      size_t categories,
                                      size_t raters,
                                      double *result);

/**
 * Per-axis preference results for JSONL judgments, as a JSON array.
 * `pooling` is 0 for all judgments, 1 for per-item majority.
 *
 * # Safety
 * `judgments_jsonl` must be nul-terminated; `result` must be writable. The
 * returned string must be released with [`capref_string_free`].
 */
enum CaprefStatus capref_humaneval_aggregate(const char *judgments_jsonl,
                                             uint32_t pooling,
                                             char **result);

/**
 * Reformulation statistics for JSONL pairs, as a JSON object. `unit` is 0
 * for characters, 1 for words.
 *
 * # Safety
 * `pairs_jsonl` must be nul-terminated; `result` must be writable. The
 * returned string must be released with [`capref_string_free`].
 */
enum CaprefStatus capref_reformulation_stats(const char *pairs_jsonl, uint32_t unit, char **result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAPREF_H */
