#ifndef RELDISC_H
#define RELDISC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RdDistance {
  RD_DISTANCE_EUCLIDEAN = 0,
  RD_DISTANCE_KL = 1,
  RD_DISTANCE_JS = 2,
} RdDistance;

typedef enum RdMode {
  RD_MODE_ENCODER = 0,
  RD_MODE_DECODER = 1,
} RdMode;

typedef enum RdPreset {
  RD_PRESET_NYT122 = 0,
  RD_PRESET_NYT71 = 1,
  RD_PRESET_NYT27 = 2,
  RD_PRESET_SYNTH = 3,
  RD_PRESET_CUSTOM = 4,
} RdPreset;

/**
 * Result code of every fallible call.
 */
typedef enum RdStatus {
  RD_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  RD_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  RD_STATUS_INVALID_UTF8 = 2,
  RD_STATUS_IO = 3,
  RD_STATUS_PARSE = 4,
  RD_STATUS_INVALID_CONFIG = 5,
  RD_STATUS_NON_FINITE = 6,
  RD_STATUS_VOCAB_MISMATCH = 7,
  /**
   * Empty corpus, KB or metric input.
   */
  RD_STATUS_EMPTY_INPUT = 8,
  RD_STATUS_MISSING_GOLD = 9,
  /**
   * The library panicked; the handle arguments should be discarded.
   */
  RD_STATUS_PANIC = 10,
  RD_STATUS_OTHER = 11,
} RdStatus;

/**
 * Model variant, mirroring the CLI's `--variant`.
 */
typedef enum RdVariant {
  RD_VARIANT_DVAE = 0,
  RD_VARIANT_DVAE_E = 1,
  RD_VARIANT_DVAE_D = 2,
  RD_VARIANT_REGDVAE = 3,
  RD_VARIANT_REGDVAE_D = 4,
} RdVariant;

/**
 * Sentence corpus.
 */
typedef struct RdCorpus RdCorpus;

/**
 * Trained TransE embedding.
 */
typedef struct RdEmbedding RdEmbedding;

/**
 * Knowledge-base triplet store.
 */
typedef struct RdKb RdKb;

/**
 * Trained model with its configuration and vocabularies.
 */
typedef struct RdModel RdModel;

/**
 * Flat training configuration. Fill it with [`rd_train_options_default`]
 * and override fields as needed.
 */
typedef struct RdTrainOptions {
  enum RdVariant variant;
  size_t n_clusters;
  size_t epochs;
  size_t batch_size;
  double lr0;
  uint64_t seed;
  double alpha0;
  double alpha_final;
  double beta;
  double gamma;
  double lambda;
  enum RdDistance distance;
  /**
   * Nonzero regularizes decoder posteriors instead of encoder ones.
   */
  uint8_t regularize_decoder;
  size_t n_negatives;
  /**
   * Decoder entity embedding width.
   */
  size_t dim;
} RdTrainOptions;

typedef struct RdBCubed {
  double precision;
  double recall;
  double f1;
} RdBCubed;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none failed.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *rd_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rd_version(void);

/**
 * Loads a corpus TSV (`id, head, tail, label, features`).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RdStatus rd_corpus_load(const char *path, struct RdCorpus **out);

/**
 * Number of sentences in the corpus.
 *
 * # Safety
 * `corpus` must be a live handle and `out` a valid pointer.
 */
enum RdStatus rd_corpus_len(const struct RdCorpus *corpus, size_t *out);

/**
 * Writes the gold relation id of every sentence into `labels` (length
 * `len`, which must equal the corpus size); unlabeled sentences get
 * `SIZE_MAX`.
 *
 * # Safety
 * `labels` must point to `len` writable elements.
 */
enum RdStatus rd_corpus_gold(const struct RdCorpus *corpus, size_t *labels, size_t len);

/**
 * # Safety
 * `corpus` must be null or a handle not freed before.
 */
void rd_corpus_free(struct RdCorpus *corpus);

/**
 * Loads KB triplets (`head, relation, tail`).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RdStatus rd_kb_load(const char *path, struct RdKb **out);

/**
 * Number of distinct triplets in the KB.
 *
 * # Safety
 * `kb` must be a live handle and `out` a valid pointer.
 */
enum RdStatus rd_kb_len(const struct RdKb *kb, size_t *out);

/**
 * # Safety
 * `kb` must be null or a handle not freed before.
 */
void rd_kb_free(struct RdKb *kb);

/**
 * Trains TransE on the KB.
 *
 * # Safety
 * `kb` must be a live handle and `out` a valid pointer.
 */
enum RdStatus rd_transe_train(const struct RdKb *kb,
                              size_t dim,
                              size_t epochs,
                              double margin,
                              double lr,
                              uint64_t seed,
                              struct RdEmbedding **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RdStatus rd_embedding_load(const char *path, struct RdEmbedding **out);

/**
 * # Safety
 * `emb` must be a live handle and `path` a NUL-terminated string.
 */
enum RdStatus rd_embedding_save(const struct RdEmbedding *emb, const char *path);

/**
 * Embedding width.
 *
 * # Safety
 * `emb` must be a live handle and `out` a valid pointer.
 */
enum RdStatus rd_embedding_dim(const struct RdEmbedding *emb, size_t *out);

/**
 * # Safety
 * `emb` must be null or a handle not freed before.
 */
void rd_embedding_free(struct RdEmbedding *emb);

/**
 * Fills `out` with the preset's training defaults (variant regdvae, seed 0).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum RdStatus rd_train_options_default(enum RdPreset preset, struct RdTrainOptions *out);

/**
 * Trains a model. `emb` may be null for the `dvae` variant; corpus
 * entities are linked to KB entities by normalized name.
 *
 * # Safety
 * `corpus` must be a live handle, `emb` null or a live handle, `options`
 * and `out` valid pointers.
 */
enum RdStatus rd_model_train(const struct RdCorpus *corpus,
                             const struct RdEmbedding *emb,
                             const struct RdTrainOptions *options,
                             struct RdModel **out);

/**
 * Training options the model was built with.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum RdStatus rd_model_options(const struct RdModel *model, struct RdTrainOptions *out);

/**
 * Cluster of every corpus sentence, written into `labels` (length `len`,
 * which must equal the corpus size). The corpus is matched to the model
 * vocabularies by name; unknown entities or features fail with
 * `RD_STATUS_VOCAB_MISMATCH`. `emb` is needed only for dvae_e models.
 *
 * # Safety
 * Handles must be live (`emb` may be null); `labels` must point to `len`
 * writable elements.
 */
enum RdStatus rd_model_predict(const struct RdModel *model,
                               const struct RdCorpus *corpus,
                               const struct RdEmbedding *emb,
                               enum RdMode mode,
                               size_t *labels,
                               size_t len);

/**
 * Saves the model as a text checkpoint.
 *
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum RdStatus rd_model_save(const struct RdModel *model, const char *path);

/**
 * Loads a checkpoint written by `rd_model_save` or `reldisc train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RdStatus rd_model_load(const char *path, struct RdModel **out);

/**
 * # Safety
 * `model` must be null or a handle not freed before.
 */
void rd_model_free(struct RdModel *model);

/**
 * B-cubed precision, recall and F1 of a predicted clustering against gold
 * labels, both of length `n`.
 *
 * # Safety
 * `pred` and `gold` must point to `n` readable elements.
 */
enum RdStatus rd_b_cubed(const size_t *pred, const size_t *gold, size_t n, struct RdBCubed *out);

/**
 * Normalized mutual information of two labelings of length `n`.
 *
 * # Safety
 * `pred` and `gold` must point to `n` readable elements.
 */
enum RdStatus rd_nmi(const size_t *pred, const size_t *gold, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RELDISC_H */
