#ifndef MMRERANK_H
#define MMRERANK_H

#include <stddef.h>
#include <stdint.h>

typedef enum MmrStatus {
  MMR_STATUS_OK = 0,
  MMR_STATUS_NULL_ARGUMENT = 1,
  MMR_STATUS_INVALID_UTF8 = 2,
  MMR_STATUS_IO = 3,
  MMR_STATUS_PARSE = 4,
  MMR_STATUS_INVALID_ARGUMENT = 5,
  MMR_STATUS_NOT_FOUND = 6,
  MMR_STATUS_EMPTY = 7,
  MMR_STATUS_BUFFER_TOO_SMALL = 8,
  MMR_STATUS_UNTRAINED = 9,
  MMR_STATUS_PANIC = 10,
} MmrStatus;

/**
 * Embedding table loaded from an EMB1 or JSONL file.
 */
typedef struct MmrEmbeddings MmrEmbeddings;

/**
 * Trained reader.
 */
typedef struct MmrReader MmrReader;

/**
 * Trained reranker scorer.
 */
typedef struct MmrReranker MmrReranker;

/**
 * One sliding-window patch; pixel offsets of its top-left corner.
 */
typedef struct MmrPatch {
  uintptr_t patch_index;
  uint32_t x;
  uint32_t y;
  uint32_t kernel;
} MmrPatch;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *mmr_last_error(void);

/**
 * Library version as a static string.
 */
const char *mmr_version(void);

/**
 * Writes the patch grid of a `width` x `height` image into `out`.
 * `*out_len` receives the number of patches; when it exceeds `capacity`
 * nothing is written and `MMR_STATUS_BUFFER_TOO_SMALL` is returned, so a
 * call with `capacity = 0` queries the size.
 *
 * # Safety
 * `out` must point to `capacity` writable patches (may be NULL when
 * `capacity` is 0) and `out_len` must be writable.
 */
enum MmrStatus mmr_patch_grid(uint32_t width,
                              uint32_t height,
                              uint32_t kernel,
                              uint32_t stride,
                              struct MmrPatch *out,
                              uintptr_t capacity,
                              uintptr_t *out_len);

/**
 * VQA accuracy of `prediction` against `n_answers` annotator answers.
 *
 * # Safety
 * `answers` must point to `n_answers` NUL-terminated strings; `out` must be writable.
 */
enum MmrStatus mmr_vqa_accuracy(const char *prediction,
                                const char *const *answers,
                                uintptr_t n_answers,
                                double *out);

/**
 * Loads an embedding table (EMB1 or JSONL).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum MmrStatus mmr_embeddings_load(const char *path, struct MmrEmbeddings **out);

/**
 * # Safety
 * `h` must come from [`mmr_embeddings_load`] and not be used afterwards. NULL is ignored.
 */
void mmr_embeddings_free(struct MmrEmbeddings *h);

/**
 * # Safety
 * `h` must be a live handle or NULL (returns 0).
 */
uintptr_t mmr_embeddings_len(const struct MmrEmbeddings *h);

/**
 * # Safety
 * `h` must be a live handle or NULL (returns 0).
 */
uintptr_t mmr_embeddings_dim(const struct MmrEmbeddings *h);

/**
 * Id of row `row`, borrowed from the handle; NULL when out of range.
 *
 * # Safety
 * `h` must be a live handle or NULL.
 */
const char *mmr_embeddings_id(const struct MmrEmbeddings *h, uintptr_t row);

/**
 * Exact inner-product top-`k` of `query` against the table. Writes up to `k`
 * row indices and scores, ordered by score descending then id ascending;
 * `*out_len` receives the count written.
 *
 * # Safety
 * `query` must hold `dim` floats; `out_rows` and `out_scores` must hold `k` entries.
 */
enum MmrStatus mmr_embeddings_top_k(const struct MmrEmbeddings *h,
                                    const float *query,
                                    uintptr_t dim,
                                    uintptr_t k,
                                    uintptr_t *out_rows,
                                    double *out_scores,
                                    uintptr_t *out_len);

/**
 * Loads a reranker checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum MmrStatus mmr_reranker_load(const char *path, struct MmrReranker **out);

/**
 * # Safety
 * `h` must come from [`mmr_reranker_load`] and not be used afterwards. NULL is ignored.
 */
void mmr_reranker_free(struct MmrReranker *h);

/**
 * Number of features the scorer expects.
 *
 * # Safety
 * `h` must be a live handle or NULL (returns 0).
 */
uintptr_t mmr_reranker_feature_dim(const struct MmrReranker *h);

/**
 * Scores one feature vector of length `n_features`.
 *
 * # Safety
 * `features` must hold `n_features` doubles; `out` must be writable.
 */
enum MmrStatus mmr_reranker_score(const struct MmrReranker *h,
                                  const double *features,
                                  uintptr_t n_features,
                                  double *out);

/**
 * Loads a reader checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum MmrStatus mmr_reader_load(const char *path, struct MmrReader **out);

/**
 * # Safety
 * `h` must come from [`mmr_reader_load`] and not be used afterwards. NULL is ignored.
 */
void mmr_reader_free(struct MmrReader *h);

/**
 * Number of leading candidates the reader consumes.
 *
 * # Safety
 * `h` must be a live handle or NULL (returns 0).
 */
uintptr_t mmr_reader_k(const struct MmrReader *h);

/**
 * Answers a question from raw candidate texts and their ranking scores,
 * in rank order. Only the first k candidates are read. The answer is copied
 * into `out` with a terminating NUL; `*out_len` receives its byte length
 * without the NUL, and `MMR_STATUS_BUFFER_TOO_SMALL` is returned if
 * `capacity` cannot hold it.
 *
 * # Safety
 * `texts` and `scores` must hold `n` entries; `out` must hold `capacity` bytes.
 */
enum MmrStatus mmr_reader_predict(const struct MmrReader *h,
                                  const char *question,
                                  const char *const *texts,
                                  const double *scores,
                                  uintptr_t n,
                                  char *out,
                                  uintptr_t capacity,
                                  uintptr_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MMRERANK_H */
