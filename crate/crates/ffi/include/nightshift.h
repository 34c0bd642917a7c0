#ifndef NIGHTSHIFT_H
#define NIGHTSHIFT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum NsStatus {
  NS_STATUS_OK = 0,
  NS_STATUS_INVALID_ARGUMENT = 1,
  NS_STATUS_INVALID_STATE = 2,
  NS_STATUS_DATA = 3,
  NS_STATUS_LOAD = 4,
  NS_STATUS_IO = 5,
  NS_STATUS_DIVERGED = 6,
  NS_STATUS_NULL_POINTER = 7,
  NS_STATUS_PANIC = 8,
} NsStatus;

/**
 * Image to global descriptor pipeline.
 */
typedef struct NsFeaturizer NsFeaturizer;

/**
 * Searchable descriptor database.
 */
typedef struct NsIndex NsIndex;

/**
 * PCA projection model.
 */
typedef struct NsPca NsPca;

/**
 * Trained night-to-day translation model.
 */
typedef struct NsTranslator NsTranslator;

/**
 * Visual vocabulary (k cluster centers).
 */
typedef struct NsVocabulary NsVocabulary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *ns_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ns_version(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum NsStatus ns_vocabulary_load(const char *path, struct NsVocabulary **out);

/**
 * # Safety
 * `v` must be null or come from [`ns_vocabulary_load`].
 */
void ns_vocabulary_free(struct NsVocabulary *v);

/**
 * Number of clusters, 0 for a null handle.
 *
 * # Safety
 * `v` must be null or a live handle.
 */
size_t ns_vocabulary_k(const struct NsVocabulary *v);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum NsStatus ns_pca_load(const char *path, struct NsPca **out);

/**
 * # Safety
 * `p` must be null or come from [`ns_pca_load`].
 */
void ns_pca_free(struct NsPca *p);

/**
 * Featurizer with default extraction settings. `pca` may be null to keep
 * full VLAD vectors. Both models are copied.
 *
 * # Safety
 * `vocab` must be a live handle, `pca` null or live, `out` writable.
 */
enum NsStatus ns_featurizer_new(const struct NsVocabulary *vocab,
                                const struct NsPca *pca,
                                struct NsFeaturizer **out);

/**
 * # Safety
 * `f` must be null or come from [`ns_featurizer_new`].
 */
void ns_featurizer_free(struct NsFeaturizer *f);

/**
 * Length of the descriptors produced by `f`, 0 for a null handle.
 *
 * # Safety
 * `f` must be null or a live handle.
 */
size_t ns_featurizer_output_dim(const struct NsFeaturizer *f);

/**
 * Describe an interleaved 8-bit RGB image into `out[0..out_len]`;
 * `out_len` must equal [`ns_featurizer_output_dim`].
 *
 * # Safety
 * `pixels` must hold `height * width * 3` bytes and `out` `out_len` doubles.
 */
enum NsStatus ns_featurizer_describe(const struct NsFeaturizer *f,
                                     const uint8_t *pixels,
                                     size_t height,
                                     size_t width,
                                     double *out,
                                     size_t out_len);

/**
 * Load a descriptor database file into a search index.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum NsStatus ns_index_load(const char *path, struct NsIndex **out);

/**
 * # Safety
 * `i` must be null or come from [`ns_index_load`].
 */
void ns_index_free(struct NsIndex *i);

/**
 * Number of entries, 0 for a null handle.
 *
 * # Safety
 * `i` must be null or a live handle.
 */
size_t ns_index_len(const struct NsIndex *i);

/**
 * Descriptor length, 0 for a null handle.
 *
 * # Safety
 * `i` must be null or a live handle.
 */
size_t ns_index_dim(const struct NsIndex *i);

/**
 * Nearest entry to `query` by Euclidean distance.
 *
 * # Safety
 * `query` must hold `len` doubles; `out_entry` and `out_distance` writable.
 */
enum NsStatus ns_index_query(const struct NsIndex *i,
                             const double *query,
                             size_t len,
                             size_t *out_entry,
                             double *out_distance);

/**
 * Copy the id of entry `entry` into `buf` (NUL-terminated, truncated to
 * `cap`). Returns the id length in bytes without the terminator, or
 * `usize::MAX` for an invalid handle or entry.
 *
 * # Safety
 * `buf` must be null (to query the length) or hold `cap` bytes.
 */
size_t ns_index_entry_id(const struct NsIndex *i, size_t entry, char *buf, size_t cap);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum NsStatus ns_translator_load(const char *path, struct NsTranslator **out);

/**
 * # Safety
 * `t` must be null or come from [`ns_translator_load`].
 */
void ns_translator_free(struct NsTranslator *t);

/**
 * Translate a night image to day. Input and output are interleaved 8-bit
 * RGB of the same size and may not overlap.
 *
 * # Safety
 * `pixels` and `out` must each hold `height * width * 3` bytes.
 */
enum NsStatus ns_translator_translate(const struct NsTranslator *t,
                                      const uint8_t *pixels,
                                      size_t height,
                                      size_t width,
                                      uint8_t *out);

/**
 * Translation (meters) and rotation (degrees) error between two poses,
 * each given as `[tx, ty, tz, qw, qx, qy, qz]`.
 *
 * # Safety
 * `estimate` and `truth` must hold 7 doubles; outputs must be writable.
 */
enum NsStatus ns_pose_error(const double *estimate,
                            const double *truth,
                            double *out_meters,
                            double *out_degrees);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NIGHTSHIFT_H */
