#ifndef GRAPHLSTM_H
#define GRAPHLSTM_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum GlStatus {
  GL_STATUS_OK = 0,
  // A required pointer argument was NULL.
  GL_STATUS_NULL_POINTER = 1,
  // A string argument was not valid UTF-8.
  GL_STATUS_INVALID_UTF8 = 2,
  // An argument was out of its domain or shapes did not match.
  GL_STATUS_ARGUMENT = 3,
  // A configuration value was malformed or out of range.
  GL_STATUS_CONFIG = 4,
  // The dataset was missing or malformed.
  GL_STATUS_DATA = 5,
  // Reading or writing a file failed.
  GL_STATUS_IO = 6,
  // A checkpoint was missing entries or malformed.
  GL_STATUS_CHECKPOINT = 7,
  // An index or buffer was too small.
  GL_STATUS_OUT_OF_RANGE = 8,
  // The library panicked; the message holds the panic payload.
  GL_STATUS_PANIC = 9,
} GlStatus;

// Run configuration.
typedef struct GlConfig GlConfig;

// A loaded dataset with neighbor sets computed.
typedef struct GlDataset GlDataset;

// A pretrained node-embedding model.
typedef struct GlEmbedding GlEmbedding;

// Cross-validation results.
typedef struct GlMetrics GlMetrics;

// A trained classifier together with the configuration it was trained with.
typedef struct GlModel GlModel;

typedef struct GlDatasetInfo {
  size_t num_graphs;
  size_t total_nodes;
  // Size of the node-label alphabet.
  size_t num_node_labels;
  size_t num_classes;
} GlDatasetInfo;

typedef struct GlCvSummary {
  double mean;
  // Population standard deviation over folds.
  double std;
  size_t num_folds;
} GlCvSummary;

typedef struct GlPretrainReport {
  double initial_loss;
  double final_loss;
  double node_accuracy;
} GlPretrainReport;

typedef struct GlTrainReport {
  size_t epochs;
  double final_loss;
  // Accuracy on the training graphs under the evaluation protocol.
  double train_accuracy;
} GlTrainReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *gl_version(void);

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next failing call on the same thread.
const char *gl_last_error_message(void);

// Releases a string returned by this library.
void gl_string_free(char *s);

// Default configuration.
enum GlStatus gl_config_default(struct GlConfig **out);

// Parses a flat JSON configuration; absent keys take their defaults.
enum GlStatus gl_config_from_json(const char *json, struct GlConfig **out);

// Sets one key from a JSON value, e.g. `("d", "64")` or
// `("ordering", "\"bfs\"")`. A value that is not JSON is taken as a string.
enum GlStatus gl_config_set(struct GlConfig *cfg, const char *key, const char *value);

// Serializes the configuration as JSON; free the result with
// `gl_string_free`.
enum GlStatus gl_config_to_json(const struct GlConfig *cfg, char **out);

void gl_config_free(struct GlConfig *cfg);

// Loads a TU dataset directory, applying the configured node cap and
// computing the neighbor sets the configuration needs.
enum GlStatus gl_dataset_load(const char *dir, const struct GlConfig *cfg, struct GlDataset **out);

enum GlStatus gl_dataset_info(const struct GlDataset *ds, struct GlDatasetInfo *out);

// Dense class index of graph `index`.
enum GlStatus gl_dataset_graph_label(const struct GlDataset *ds, size_t index, size_t *out);

void gl_dataset_free(struct GlDataset *ds);

// Stratified k-fold cross-validation.
enum GlStatus gl_cross_validate(const struct GlDataset *ds,
                                const struct GlConfig *cfg,
                                struct GlMetrics **out);

enum GlStatus gl_metrics_summary(const struct GlMetrics *m, struct GlCvSummary *out);

enum GlStatus gl_metrics_fold_accuracy(const struct GlMetrics *m, size_t fold, double *out);

// Writes summary.json and metrics.csv into `dir`.
enum GlStatus gl_metrics_write(const struct GlMetrics *m, const char *dir);

void gl_metrics_free(struct GlMetrics *m);

// Pretrains node embeddings on every graph. `report` may be NULL.
enum GlStatus gl_pretrain(const struct GlDataset *ds,
                          const struct GlConfig *cfg,
                          struct GlEmbedding **out,
                          struct GlPretrainReport *report);

// Shape of the embedding matrix `E` (node labels × dimension).
enum GlStatus gl_embedding_shape(const struct GlEmbedding *e, size_t *rows, size_t *cols);

// Copies `E` row-major into `buf`, which must hold rows × cols doubles.
enum GlStatus gl_embedding_copy(const struct GlEmbedding *e, double *buf, size_t len);

// Saves the embedding model as JSON with keys `E`, `w`, the predictor
// weights and `metadata`.
enum GlStatus gl_embedding_save(const struct GlEmbedding *e, const char *path);

void gl_embedding_free(struct GlEmbedding *e);

// Trains on every graph of the dataset. `report` may be NULL.
enum GlStatus gl_train(const struct GlDataset *ds,
                       const struct GlConfig *cfg,
                       struct GlModel **out,
                       struct GlTrainReport *report);

// Saves parameters with the training configuration in the metadata.
enum GlStatus gl_model_save(const struct GlModel *m, const char *path);

// Loads a model saved by `gl_model_save` or the `train` command.
enum GlStatus gl_model_load(const char *path, struct GlModel **out);

// Class probabilities of graph `index`, averaged over the configured
// number of walk samples drawn from `seed`. Writes `num_classes` values
// into `probs` and the count into `written` (which may be NULL).
enum GlStatus gl_model_predict(const struct GlModel *m,
                               const struct GlDataset *ds,
                               size_t index,
                               uint64_t seed,
                               double *probs,
                               size_t capacity,
                               size_t *written);

void gl_model_free(struct GlModel *m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRAPHLSTM_H */
