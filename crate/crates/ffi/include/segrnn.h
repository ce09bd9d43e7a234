/* C API for the segrnn sequence labeling engine. */

#ifndef SEGRNN_H
#define SEGRNN_H

/* Generated by cbindgen from segrnn-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum SrnnStatus {
  SRNN_OK = 0,
  SRNN_NULL_ARGUMENT = 1,
  SRNN_UTF8_ERROR = 2,
  SRNN_IO_ERROR = 3,
  SRNN_PARSE_ERROR = 4,
  SRNN_VALIDATION_ERROR = 5,
  SRNN_INDEX_OUT_OF_RANGE = 6,
  SRNN_BUFFER_TOO_SMALL = 7,
} SrnnStatus;

/**
 * Opaque corpus handle.
 */
typedef struct SrnnCorpus SrnnCorpus;

/**
 * Opaque model handle.
 */
typedef struct SrnnModel SrnnModel;

/**
 * One decoded segment: `duration` tokens starting at `start`, with an index
 * into the model's label inventory. A duration of 0 means the model does
 * not produce segment boundaries (CTC); only the label is meaningful then.
 */
typedef struct SrnnSegment {
  size_t start;
  size_t duration;
  size_t label;
} SrnnSegment;

/**
 * Corpus-level metrics, mirroring the evaluation table.
 */
typedef struct SrnnMetrics {
  double p_seg;
  double r_seg;
  double f_seg;
  double p_tag;
  double r_tag;
  double f_tag;
  double error_rate;
} SrnnMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *srnn_version(void);

/**
 * Message for the most recent error on this thread. Valid until the next
 * failing call on the same thread.
 */
const char *srnn_last_error(void);

/**
 * Load a model file. On success `*out` owns the handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SrnnStatus srnn_model_load(const char *path, struct SrnnModel **out);

/**
 * # Safety
 * `model` must come from `srnn_model_load` and not be freed twice.
 */
void srnn_model_free(struct SrnnModel *model);

/**
 * Number of labels in the model inventory.
 *
 * # Safety
 * `model` must be a live handle.
 */
size_t srnn_model_label_count(const struct SrnnModel *model);

/**
 * Copy the NUL-terminated name of label `index` into `buf`.
 *
 * # Safety
 * `model` must be a live handle and `buf` writable for `buf_len` bytes.
 */
enum SrnnStatus srnn_model_label_name(const struct SrnnModel *model,
                                      size_t index,
                                      char *buf,
                                      size_t buf_len);

/**
 * Load a corpus file. On success `*out` owns the handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SrnnStatus srnn_corpus_load(const char *path, struct SrnnCorpus **out);

/**
 * # Safety
 * `corpus` must come from `srnn_corpus_load` and not be freed twice.
 */
void srnn_corpus_free(struct SrnnCorpus *corpus);

/**
 * Number of instances in the corpus.
 *
 * # Safety
 * `corpus` must be a live handle.
 */
size_t srnn_corpus_len(const struct SrnnCorpus *corpus);

/**
 * Decode instance `index` of the corpus. On success `*out_segments` points
 * at `*out_len` segments allocated by the library; release them with
 * `srnn_segments_free`. Segmental models fill start/duration; CTC yields
 * label-only segments with duration 0.
 *
 * # Safety
 * All pointers must be valid; the handles must be live.
 */
enum SrnnStatus srnn_decode(const struct SrnnModel *model,
                            const struct SrnnCorpus *corpus,
                            size_t index,
                            struct SrnnSegment **out_segments,
                            size_t *out_len);

/**
 * Release a segment array from `srnn_decode`.
 *
 * # Safety
 * `segments`/`len` must come from a successful `srnn_decode`.
 */
void srnn_segments_free(struct SrnnSegment *segments, size_t len);

/**
 * Decode the whole corpus and score it against its own gold annotation.
 *
 * # Safety
 * All pointers must be valid; the handles must be live.
 */
enum SrnnStatus srnn_evaluate(const struct SrnnModel *model,
                              const struct SrnnCorpus *corpus,
                              struct SrnnMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEGRNN_H */
