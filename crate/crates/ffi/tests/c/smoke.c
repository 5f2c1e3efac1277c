/* Exercises the C API end to end: argv[1] corpus TSV, argv[2] KB TSV,
 * argv[3] model output path. Prints `key value` lines for the Rust test. */
#include <stdio.h>
#include <stdlib.h>

#include "reldisc.h"

#define CHECK(call)                                                          \
  do {                                                                       \
    RdStatus st_ = (call);                                                   \
    if (st_ != RD_STATUS_OK) {                                               \
      fprintf(stderr, "%s failed (%d): %s\n", #call, (int)st_,               \
              rd_last_error());                                              \
      return 1;                                                              \
    }                                                                        \
  } while (0)

int main(int argc, char **argv) {
  if (argc != 4) {
    fprintf(stderr, "usage: smoke CORPUS KB MODEL_OUT\n");
    return 2;
  }
  RdCorpus *corpus = NULL;
  RdKb *kb = NULL;
  RdEmbedding *emb = NULL;
  RdModel *model = NULL;
  RdModel *reloaded = NULL;
  size_t n = 0;

  RdStatus missing = rd_corpus_load("/nonexistent/corpus.tsv", &corpus);
  printf("missing_status %d\n", (int)missing);
  printf("missing_has_message %d\n", rd_last_error() != NULL);

  CHECK(rd_corpus_load(argv[1], &corpus));
  CHECK(rd_kb_load(argv[2], &kb));
  CHECK(rd_corpus_len(corpus, &n));
  CHECK(rd_transe_train(kb, 8, 50, 1.0, 0.01, 0, &emb));

  RdTrainOptions opts;
  CHECK(rd_train_options_default(RD_PRESET_SYNTH, &opts));
  opts.epochs = 5;
  CHECK(rd_model_train(corpus, emb, &opts, &model));
  CHECK(rd_model_save(model, argv[3]));
  CHECK(rd_model_load(argv[3], &reloaded));

  size_t *pred = malloc(n * sizeof *pred);
  size_t *pred2 = malloc(n * sizeof *pred2);
  size_t *gold = malloc(n * sizeof *gold);
  CHECK(rd_model_predict(model, corpus, NULL, RD_MODE_ENCODER, pred, n));
  CHECK(rd_model_predict(reloaded, corpus, NULL, RD_MODE_ENCODER, pred2, n));
  CHECK(rd_corpus_gold(corpus, gold, n));
  int same = 1;
  for (size_t i = 0; i < n; i++) same &= pred[i] == pred2[i];

  RdBCubed b3;
  double nmi = 0.0;
  CHECK(rd_b_cubed(pred, gold, n, &b3));
  CHECK(rd_nmi(pred, gold, n, &nmi));
  printf("n %zu\n", n);
  printf("reload_same %d\n", same);
  printf("f1 %.17g\n", b3.f1);
  printf("nmi %.17g\n", nmi);
  printf("short_buffer %d\n",
         (int)rd_model_predict(model, corpus, NULL, RD_MODE_ENCODER, pred, n - 1));

  free(pred);
  free(pred2);
  free(gold);
  rd_model_free(reloaded);
  rd_model_free(model);
  rd_embedding_free(emb);
  rd_kb_free(kb);
  rd_corpus_free(corpus);
  return 0;
}
