#ifndef COMMSEARCH_H
#define COMMSEARCH_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum cs_method {
  CS_METHOD_LOCAL = 0,
  CS_METHOD_GLOBAL = 1,
  CS_METHOD_ORACLE = 2,
} cs_method;

typedef enum cs_similarity {
  CS_SIMILARITY_COSINE = 0,
  CS_SIMILARITY_L1 = 1,
  CS_SIMILARITY_L2 = 2,
} cs_similarity;

typedef enum cs_status {
  CS_STATUS_OK = 0,
  CS_STATUS_NULL_POINTER = 1,
  CS_STATUS_INVALID_ARGUMENT = 2,
  CS_STATUS_PARSE = 3,
  CS_STATUS_IO = 4,
  CS_STATUS_NUMERIC = 5,
  CS_STATUS_FORMAT = 6,
  CS_STATUS_DIMENSION = 7,
  CS_STATUS_BUFFER_TOO_SMALL = 8,
  CS_STATUS_PANIC = 9,
} cs_status;

typedef struct cs_embeddings cs_embeddings;

typedef struct cs_graph cs_graph;

typedef struct cs_model cs_model;

typedef struct cs_scores cs_scores;

/**
 * Pre-training knobs exposed to C. Start from [`cs_train_options_default`].
 */
typedef struct cs_train_options {
  size_t epochs;
  uint64_t seed;
  size_t model_dim;
  size_t heads;
  size_t layers;
  size_t max_hops;
  double learning_rate;
  double alpha;
  double dropout;
} cs_train_options;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Free with
 * [`cs_string_free`].
 */
char *cs_last_error(void);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void cs_string_free(char *s);

/**
 * Static version string; do not free.
 */
const char *cs_version(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum cs_status cs_graph_load(const char *path, struct cs_graph **out);

/**
 * Build a graph on `n` nodes from `m` edges `(us[i], vs[i])`.
 *
 * # Safety
 * `us` and `vs` must each point to `m` readable values.
 */
enum cs_status cs_graph_from_edges(size_t n,
                                   const size_t *us,
                                   const size_t *vs,
                                   size_t m,
                                   struct cs_graph **out);

/**
 * Node count, or 0 for a null handle.
 *
 * # Safety
 * `g` must be a live handle or null.
 */
size_t cs_graph_node_count(const struct cs_graph *g);

/**
 * # Safety
 * `g` must come from this library or be null; it must not be used afterwards.
 */
void cs_graph_free(struct cs_graph *g);

struct cs_train_options cs_train_options_default(void);

/**
 * Pre-train on `g` with one-hot node features.
 *
 * # Safety
 * `g` must be a live handle and `out` writable. `opts` may be null for defaults.
 */
enum cs_status cs_model_pretrain(const struct cs_graph *g,
                                 const struct cs_train_options *opts,
                                 struct cs_model **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum cs_status cs_model_load(const char *path, struct cs_model **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum cs_status cs_model_save(const struct cs_model *model, const char *path);

/**
 * # Safety
 * `m` must come from this library or be null; it must not be used afterwards.
 */
void cs_model_free(struct cs_model *m);

/**
 * Encode every node of `g` (one-hot features).
 *
 * # Safety
 * `model` and `g` must be live handles and `out` writable.
 */
enum cs_status cs_embed(const struct cs_model *model,
                        const struct cs_graph *g,
                        struct cs_embeddings **out);

/**
 * # Safety
 * `e` must come from this library or be null; it must not be used afterwards.
 */
void cs_embeddings_free(struct cs_embeddings *e);

/**
 * Average similarity of every node to the `query_len` query nodes.
 *
 * # Safety
 * `emb` must be a live handle, `query` must point to `query_len` values and
 * `out` must be writable.
 */
enum cs_status cs_scores_compute(const struct cs_embeddings *emb,
                                 const size_t *query,
                                 size_t query_len,
                                 enum cs_similarity similarity,
                                 struct cs_scores **out);

/**
 * Wrap caller-provided scores.
 *
 * # Safety
 * `values` must point to `n` values, `query` to `query_len` values.
 */
enum cs_status cs_scores_from_values(const double *values,
                                     size_t n,
                                     const size_t *query,
                                     size_t query_len,
                                     struct cs_scores **out);

/**
 * # Safety
 * `s` must be a live handle or null.
 */
size_t cs_scores_len(const struct cs_scores *s);

/**
 * Copy the scores into `buf`, which must hold [`cs_scores_len`] values.
 *
 * # Safety
 * `buf` must point to `cap` writable values.
 */
enum cs_status cs_scores_copy(const struct cs_scores *s, double *buf, size_t cap);

/**
 * # Safety
 * `s` must come from this library or be null; it must not be used afterwards.
 */
void cs_scores_free(struct cs_scores *s);

/**
 * Search the community of the query attached to `scores`. Member ids are
 * written to `members` (capacity `cap`); `*len` always receives the member
 * count, so a call with `cap = 0` sizes the buffer. `max_size = 0` selects
 * the default cap. `esg` and `connected` may be null.
 *
 * # Safety
 * Handles must be live, `members` must hold `cap` values, `len` writable.
 */
enum cs_status cs_search(const struct cs_scores *scores,
                         const struct cs_graph *g,
                         enum cs_method method,
                         double tau,
                         size_t max_size,
                         size_t *members,
                         size_t cap,
                         size_t *len,
                         double *esg,
                         bool *connected);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COMMSEARCH_H */
