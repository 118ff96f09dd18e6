/*
 * libwsd: homonym sense disambiguation toolkit, C interface.
 *
 * Objects are opaque handles created by *_load / *_train functions and
 * released by the matching *_free. Every fallible call returns a wsd_status;
 * on failure wsd_last_error() describes the problem for the calling thread.
 * Strings are UTF-8.
 */
#ifndef WSD_WSD_H_
#define WSD_WSD_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define WSD_API __declspec(dllexport)
#elif defined(__GNUC__)
#define WSD_API __attribute__((visibility("default")))
#else
#define WSD_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum wsd_status {
  WSD_OK = 0,
  WSD_ERR_INVALID_ARGUMENT = 1,
  WSD_ERR_IO = 2,
  WSD_ERR_FORMAT = 3,
  WSD_ERR_NUMERIC = 4,
  WSD_ERR_NOT_FOUND = 5,
  WSD_ERR_INTERNAL = 99
} wsd_status;

typedef struct wsd_spec wsd_spec;
typedef struct wsd_dataset wsd_dataset;
typedef struct wsd_embeddings wsd_embeddings;
typedef struct wsd_model wsd_model;
typedef struct wsd_history wsd_history;

WSD_API const char* wsd_version(void);
/* Message of the last failed call on this thread; "" if none. */
WSD_API const char* wsd_last_error(void);
WSD_API const char* wsd_status_name(wsd_status status);

/* ---- homonym spec --------------------------------------------------- */

WSD_API wsd_status wsd_spec_load(const char* path, wsd_spec** out);
WSD_API void wsd_spec_free(wsd_spec* spec);
WSD_API size_t wsd_spec_sense_count(const wsd_spec* spec);
/* Returns NULL for an out-of-range id. */
WSD_API const char* wsd_spec_sense_gloss(const wsd_spec* spec, size_t sense_id);
WSD_API const char* wsd_spec_lemma(const wsd_spec* spec);

/* ---- corpus stages -------------------------------------------------- */

/* Georgian-script filtering. Writes one normalised sentence per line, or the
 * kept raw lines when raw_lines != 0. */
WSD_API wsd_status wsd_filter_corpus(const char* const* input_paths, size_t n_inputs,
                                     const char* output_path, int raw_lines,
                                     uint64_t* lines_kept, uint64_t* records_written);

/* filter -> segment -> window extraction into an unlabelled dataset file. */
WSD_API wsd_status wsd_extract_windows(const char* const* input_paths, size_t n_inputs,
                                       const wsd_spec* spec, const char* output_path,
                                       uint64_t* windows_written);

/* ---- datasets ------------------------------------------------------- */

WSD_API wsd_status wsd_dataset_load(const char* path, const wsd_spec* spec, wsd_dataset** out);
WSD_API void wsd_dataset_free(wsd_dataset* dataset);
/* Counts every record, OTHER included. */
WSD_API size_t wsd_dataset_size(const wsd_dataset* dataset);

typedef struct wsd_split_config {
  uint64_t seed;
  double test_fraction;
  double validation_fraction;
} wsd_split_config;

WSD_API void wsd_split_config_default(wsd_split_config* config);

/* ---- embeddings ----------------------------------------------------- */

typedef struct wsd_embedding_config {
  int dimension;
  int window;
  uint64_t min_count;
  int epochs;
  int negative_samples;
  double learning_rate;
  double min_learning_rate;
  uint64_t seed;
} wsd_embedding_config;

WSD_API void wsd_embedding_config_default(wsd_embedding_config* config);
WSD_API wsd_status wsd_embeddings_train(const char* corpus_path,
                                        const wsd_embedding_config* config,
                                        wsd_embeddings** out);
WSD_API wsd_status wsd_embeddings_save(const wsd_embeddings* emb, const char* path);
WSD_API wsd_status wsd_embeddings_load(const char* path, wsd_embeddings** out);
WSD_API void wsd_embeddings_free(wsd_embeddings* emb);
WSD_API size_t wsd_embeddings_vocab_size(const wsd_embeddings* emb);
WSD_API int wsd_embeddings_dimension(const wsd_embeddings* emb);
WSD_API const char* wsd_embeddings_word(const wsd_embeddings* emb, size_t index);

typedef struct wsd_neighbor {
  size_t index;
  double similarity;
} wsd_neighbor;

/* Fills up to k neighbours (excluding the query) and stores the count. */
WSD_API wsd_status wsd_embeddings_nearest(const wsd_embeddings* emb, const char* word, size_t k,
                                          wsd_neighbor* out, size_t* n_out);

/* ---- classifier ----------------------------------------------------- */

typedef enum wsd_optimizer { WSD_OPTIMIZER_ADAM = 0, WSD_OPTIMIZER_SGD = 1 } wsd_optimizer;

typedef struct wsd_train_config {
  int max_epochs;
  int batch_size;
  double learning_rate;
  wsd_optimizer optimizer;
  int patience;
  int early_stopping; /* 0 disables; training then runs max_epochs */
  double gradient_clip_norm;
  uint64_t seed;
} wsd_train_config;

WSD_API void wsd_train_config_default(wsd_train_config* config);

typedef struct wsd_epoch_record {
  int epoch;
  double train_loss;
  double validation_loss;
  double validation_accuracy;
} wsd_epoch_record;

typedef void (*wsd_epoch_callback)(const wsd_epoch_record* record, void* user_data);

/* Drops OTHER labels, splits with `split`, trains on train/validation.
 * history may be NULL. callback may be NULL. */
WSD_API wsd_status wsd_train(const wsd_dataset* dataset, const wsd_embeddings* emb,
                             const wsd_split_config* split, const wsd_train_config* config,
                             wsd_epoch_callback callback, void* user_data, wsd_model** model_out,
                             wsd_history** history_out);

WSD_API void wsd_history_free(wsd_history* history);
WSD_API size_t wsd_history_epochs(const wsd_history* history);
WSD_API wsd_status wsd_history_record(const wsd_history* history, size_t index,
                                      wsd_epoch_record* out);
WSD_API int wsd_history_best_epoch(const wsd_history* history);
WSD_API int wsd_history_stopped_early(const wsd_history* history);

WSD_API wsd_status wsd_model_save(const wsd_model* model, const char* path);
WSD_API wsd_status wsd_model_load(const char* path, wsd_model** out);
WSD_API void wsd_model_free(wsd_model* model);
WSD_API size_t wsd_model_parameter_count(const wsd_model* model);
WSD_API int wsd_model_class_count(const wsd_model* model);

/* Tokenises `sentence`, takes the first window around a form of the spec's
 * homonym and predicts its sense. probs receives min(capacity, classes)
 * values. Returns WSD_ERR_NOT_FOUND when the sentence lacks the homonym. */
WSD_API wsd_status wsd_predict_sentence(const wsd_model* model, const wsd_embeddings* emb,
                                        const wsd_spec* spec, const char* sentence, int* label,
                                        float* probs, size_t probs_capacity);

/* ---- evaluation ----------------------------------------------------- */

/* Evaluates `model` on the test part of the split and writes a "metrics"
 * document. accuracy may be NULL. */
WSD_API wsd_status wsd_evaluate(const wsd_model* model, const wsd_embeddings* emb,
                                const wsd_dataset* dataset, const wsd_split_config* split,
                                const char* model_name, const char* metrics_path,
                                double* accuracy);

/* Trains `runs` models with seeds base_seed.. on the fixed split and writes a
 * "repetition" document. threads <= 0 means one. */
WSD_API wsd_status wsd_repeat_training(const wsd_dataset* dataset, const wsd_embeddings* emb,
                                       const wsd_split_config* split,
                                       const wsd_train_config* config, int runs,
                                       uint64_t base_seed, int threads, const char* model_name,
                                       const char* metrics_path, double* mean_accuracy);

/* Training-size ablation on the split's train part (validation merged back
 * into it) with early stopping off; writes an "ablation" document. */
WSD_API wsd_status wsd_ablate(const wsd_dataset* dataset, const wsd_embeddings* emb,
                              const wsd_split_config* split, const wsd_train_config* config,
                              const double* fractions, size_t n_fractions, int epochs,
                              const char* model_name, const char* metrics_path);

#ifdef __cplusplus
}
#endif

#endif /* WSD_WSD_H_ */
