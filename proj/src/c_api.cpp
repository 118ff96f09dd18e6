#include "wsd/wsd.h"

#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "wsd/corpus.hpp"
#include "wsd/embeddings.hpp"
#include "wsd/error.hpp"
#include "wsd/eval.hpp"
#include "wsd/lstm.hpp"
#include "wsd/trainer.hpp"

struct wsd_spec {
  wsd::HomonymSpec spec;
};
struct wsd_dataset {
  std::vector<wsd::LabeledExample> examples;
  std::size_t num_classes = 3;
};
struct wsd_embeddings {
  wsd::EmbeddingMatrix matrix;
};
struct wsd_model {
  wsd::LstmModel model;
};
struct wsd_history {
  wsd::TrainingHistory history;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
wsd_status guarded(F&& body) {
  try {
    g_last_error.clear();
    body();
    return WSD_OK;
  } catch (const wsd::InvalidArgument& e) {
    g_last_error = e.what();
    return WSD_ERR_INVALID_ARGUMENT;
  } catch (const wsd::IoError& e) {
    g_last_error = e.what();
    return WSD_ERR_IO;
  } catch (const wsd::FormatError& e) {
    g_last_error = e.what();
    return WSD_ERR_FORMAT;
  } catch (const wsd::NumericError& e) {
    g_last_error = e.what();
    return WSD_ERR_NUMERIC;
  } catch (const wsd::NotFound& e) {
    g_last_error = e.what();
    return WSD_ERR_NOT_FOUND;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return WSD_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return WSD_ERR_INTERNAL;
  }
}

void require(bool condition, const char* message) {
  if (!condition) throw wsd::InvalidArgument(message);
}

std::vector<std::filesystem::path> to_paths(const char* const* paths, std::size_t n) {
  require(paths != nullptr || n == 0, "input path list is NULL");
  std::vector<std::filesystem::path> out;
  for (std::size_t i = 0; i < n; ++i) {
    require(paths[i] != nullptr, "input path is NULL");
    out.emplace_back(paths[i]);
  }
  return out;
}

wsd::SplitSpec to_split(const wsd_split_config* split) {
  wsd_split_config defaults;
  wsd_split_config_default(&defaults);
  const auto& c = split ? *split : defaults;
  wsd::SplitSpec s;
  s.seed = c.seed;
  s.test_fraction = c.test_fraction;
  s.validation_fraction_of_train = c.validation_fraction;
  return s;
}

wsd::ClassifierTrainConfig to_train_config(const wsd_train_config* config) {
  wsd_train_config defaults;
  wsd_train_config_default(&defaults);
  const auto& c = config ? *config : defaults;
  wsd::ClassifierTrainConfig t;
  t.max_epochs = c.max_epochs;
  t.batch_size = c.batch_size;
  t.learning_rate = c.learning_rate;
  t.optimizer = c.optimizer == WSD_OPTIMIZER_SGD ? wsd::OptimizerKind::kSgd
                                                 : wsd::OptimizerKind::kAdam;
  t.early_stopping_patience = c.patience;
  t.early_stopping = c.early_stopping != 0;
  t.gradient_clip_norm = c.gradient_clip_norm;
  t.seed = c.seed;
  return t;
}

wsd::DatasetSplit split_dataset(const wsd_dataset* dataset, const wsd_split_config* split) {
  require(dataset != nullptr, "dataset is NULL");
  const auto examples = wsd::drop_other(dataset->examples);
  return wsd::stratified_split(examples, to_split(split), dataset->num_classes);
}

wsd::LstmDims dims_for(const wsd::EmbeddingMatrix& matrix, const wsd_dataset& dataset) {
  wsd::LstmDims dims;
  dims.input_dim = matrix.dimension;
  dims.classes = static_cast<int>(dataset.num_classes);
  return dims;
}

wsd_epoch_record to_record(const wsd::EpochRecord& r) {
  return {r.epoch, r.train_loss, r.validation_loss, r.validation_accuracy};
}

}  // namespace

extern "C" {

const char* wsd_version(void) { return "1.0.0"; }

const char* wsd_last_error(void) { return g_last_error.c_str(); }

const char* wsd_status_name(wsd_status status) {
  switch (status) {
    case WSD_OK: return "ok";
    case WSD_ERR_INVALID_ARGUMENT: return "invalid argument";
    case WSD_ERR_IO: return "i/o error";
    case WSD_ERR_FORMAT: return "format error";
    case WSD_ERR_NUMERIC: return "numeric error";
    case WSD_ERR_NOT_FOUND: return "not found";
    case WSD_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

// ---- spec

wsd_status wsd_spec_load(const char* path, wsd_spec** out) {
  return guarded([&] {
    require(path && out, "NULL argument");
    *out = new wsd_spec{wsd::load_homonym_spec(path)};
  });
}

void wsd_spec_free(wsd_spec* spec) { delete spec; }

size_t wsd_spec_sense_count(const wsd_spec* spec) { return spec ? spec->spec.sense_count() : 0; }

const char* wsd_spec_sense_gloss(const wsd_spec* spec, size_t sense_id) {
  if (!spec || sense_id >= spec->spec.senses.size()) return nullptr;
  return spec->spec.senses[sense_id].gloss.c_str();
}

const char* wsd_spec_lemma(const wsd_spec* spec) { return spec ? spec->spec.lemma.c_str() : nullptr; }

// ---- corpus

wsd_status wsd_filter_corpus(const char* const* input_paths, size_t n_inputs,
                             const char* output_path, int raw_lines, uint64_t* lines_kept,
                             uint64_t* records_written) {
  return guarded([&] {
    require(output_path != nullptr, "output path is NULL");
    const auto inputs = to_paths(input_paths, n_inputs);
    const auto stats = wsd::run_filter_pipeline(inputs, output_path, raw_lines != 0);
    if (lines_kept) *lines_kept = stats.lines_kept;
    if (records_written) *records_written = stats.records_written;
  });
}

wsd_status wsd_extract_windows(const char* const* input_paths, size_t n_inputs,
                               const wsd_spec* spec, const char* output_path,
                               uint64_t* windows_written) {
  return guarded([&] {
    require(spec && output_path, "NULL argument");
    const auto inputs = to_paths(input_paths, n_inputs);
    const auto n = wsd::run_extraction_pipeline(inputs, spec->spec, output_path);
    if (windows_written) *windows_written = n;
  });
}

// ---- datasets

wsd_status wsd_dataset_load(const char* path, const wsd_spec* spec, wsd_dataset** out) {
  return guarded([&] {
    require(path && spec && out, "NULL argument");
    *out = new wsd_dataset{wsd::load_labeled_dataset(path, spec->spec), spec->spec.sense_count()};
  });
}

void wsd_dataset_free(wsd_dataset* dataset) { delete dataset; }

size_t wsd_dataset_size(const wsd_dataset* dataset) {
  return dataset ? dataset->examples.size() : 0;
}

void wsd_split_config_default(wsd_split_config* config) {
  if (!config) return;
  const wsd::SplitSpec s;
  config->seed = s.seed;
  config->test_fraction = s.test_fraction;
  config->validation_fraction = s.validation_fraction_of_train;
}

// ---- embeddings

void wsd_embedding_config_default(wsd_embedding_config* config) {
  if (!config) return;
  const wsd::EmbeddingConfig c;
  config->dimension = c.dimension;
  config->window = c.window;
  config->min_count = c.min_count;
  config->epochs = c.epochs;
  config->negative_samples = c.negative_samples;
  config->learning_rate = c.learning_rate;
  config->min_learning_rate = c.min_learning_rate;
  config->seed = c.seed;
}

wsd_status wsd_embeddings_train(const char* corpus_path, const wsd_embedding_config* config,
                                wsd_embeddings** out) {
  return guarded([&] {
    require(corpus_path && out, "NULL argument");
    wsd_embedding_config defaults;
    wsd_embedding_config_default(&defaults);
    const auto& c = config ? *config : defaults;
    wsd::EmbeddingConfig cfg;
    cfg.dimension = c.dimension;
    cfg.window = c.window;
    cfg.min_count = c.min_count;
    cfg.epochs = c.epochs;
    cfg.negative_samples = c.negative_samples;
    cfg.learning_rate = c.learning_rate;
    cfg.min_learning_rate = c.min_learning_rate;
    cfg.seed = c.seed;
    *out = new wsd_embeddings{wsd::train_embeddings(std::filesystem::path(corpus_path), cfg)};
  });
}

wsd_status wsd_embeddings_save(const wsd_embeddings* emb, const char* path) {
  return guarded([&] {
    require(emb && path, "NULL argument");
    wsd::save_embeddings(emb->matrix, std::filesystem::path(path));
  });
}

wsd_status wsd_embeddings_load(const char* path, wsd_embeddings** out) {
  return guarded([&] {
    require(path && out, "NULL argument");
    *out = new wsd_embeddings{wsd::load_embeddings(std::filesystem::path(path))};
  });
}

void wsd_embeddings_free(wsd_embeddings* emb) { delete emb; }

size_t wsd_embeddings_vocab_size(const wsd_embeddings* emb) {
  return emb ? emb->matrix.rows() : 0;
}

int wsd_embeddings_dimension(const wsd_embeddings* emb) { return emb ? emb->matrix.dimension : 0; }

const char* wsd_embeddings_word(const wsd_embeddings* emb, size_t index) {
  if (!emb || index >= emb->matrix.rows()) return nullptr;
  return emb->matrix.vocab.word(index).c_str();
}

wsd_status wsd_embeddings_nearest(const wsd_embeddings* emb, const char* word, size_t k,
                                  wsd_neighbor* out, size_t* n_out) {
  return guarded([&] {
    require(emb && word && out && n_out, "NULL argument");
    const auto neighbors = wsd::nearest_neighbors(emb->matrix, word, k);
    for (std::size_t i = 0; i < neighbors.size(); ++i)
      out[i] = wsd_neighbor{neighbors[i].index, neighbors[i].similarity};
    *n_out = neighbors.size();
  });
}

// ---- classifier

void wsd_train_config_default(wsd_train_config* config) {
  if (!config) return;
  const wsd::ClassifierTrainConfig c;
  config->max_epochs = c.max_epochs;
  config->batch_size = c.batch_size;
  config->learning_rate = c.learning_rate;
  config->optimizer = WSD_OPTIMIZER_ADAM;
  config->patience = c.early_stopping_patience;
  config->early_stopping = c.early_stopping ? 1 : 0;
  config->gradient_clip_norm = c.gradient_clip_norm;
  config->seed = c.seed;
}

wsd_status wsd_train(const wsd_dataset* dataset, const wsd_embeddings* emb,
                     const wsd_split_config* split, const wsd_train_config* config,
                     wsd_epoch_callback callback, void* user_data, wsd_model** model_out,
                     wsd_history** history_out) {
  return guarded([&] {
    require(dataset && emb && model_out, "NULL argument");
    const auto parts = split_dataset(dataset, split);
    wsd::EpochCallback on_epoch;
    if (callback) {
      on_epoch = [callback, user_data](const wsd::EpochRecord& r) {
        const auto rec = to_record(r);
        callback(&rec, user_data);
      };
    }
    const auto dims = dims_for(emb->matrix, *dataset);
    const auto train = wsd::encode_examples(parts.train, emb->matrix, dims.sequence_length,
                                            dims.classes);
    const auto validation = wsd::encode_examples(parts.validation, emb->matrix,
                                                 dims.sequence_length, dims.classes);
    auto trained =
        wsd::train_classifier(train, validation, dims, to_train_config(config), on_epoch);
    auto model = std::make_unique<wsd_model>(wsd_model{std::move(trained.model)});
    if (history_out) *history_out = new wsd_history{std::move(trained.history)};
    *model_out = model.release();
  });
}

void wsd_history_free(wsd_history* history) { delete history; }

size_t wsd_history_epochs(const wsd_history* history) {
  return history ? history->history.epochs.size() : 0;
}

wsd_status wsd_history_record(const wsd_history* history, size_t index, wsd_epoch_record* out) {
  return guarded([&] {
    require(history && out, "NULL argument");
    require(index < history->history.epochs.size(), "epoch index out of range");
    *out = to_record(history->history.epochs[index]);
  });
}

int wsd_history_best_epoch(const wsd_history* history) {
  return history ? history->history.best_epoch : 0;
}

int wsd_history_stopped_early(const wsd_history* history) {
  return history && history->history.stopped_early ? 1 : 0;
}

wsd_status wsd_model_save(const wsd_model* model, const char* path) {
  return guarded([&] {
    require(model && path, "NULL argument");
    wsd::save_model(model->model, std::filesystem::path(path));
  });
}

wsd_status wsd_model_load(const char* path, wsd_model** out) {
  return guarded([&] {
    require(path && out, "NULL argument");
    *out = new wsd_model{wsd::load_model(std::filesystem::path(path))};
  });
}

void wsd_model_free(wsd_model* model) { delete model; }

size_t wsd_model_parameter_count(const wsd_model* model) {
  return model ? model->model.parameter_count() : 0;
}

int wsd_model_class_count(const wsd_model* model) { return model ? model->model.dims.classes : 0; }

wsd_status wsd_predict_sentence(const wsd_model* model, const wsd_embeddings* emb,
                                const wsd_spec* spec, const char* sentence, int* label,
                                float* probs, size_t probs_capacity) {
  return guarded([&] {
    require(model && emb && spec && sentence && label, "NULL argument");
    std::vector<wsd::SentenceWindow> windows;
    for (const auto& s : wsd::segment_and_tokenize(sentence)) {
      auto found = wsd::extract_windows(s, spec->spec, "input");
      if (!found.empty()) {
        windows = std::move(found);
        break;
      }
    }
    if (windows.empty())
      throw wsd::NotFound("sentence contains no form of '" + spec->spec.lemma + "'");
    const auto p = wsd::predict(model->model, windows.front(), emb->matrix);
    *label = p.label;
    if (probs)
      for (std::size_t k = 0; k < std::min(probs_capacity, p.probs.size()); ++k) probs[k] = p.probs[k];
  });
}

// ---- evaluation

wsd_status wsd_evaluate(const wsd_model* model, const wsd_embeddings* emb,
                        const wsd_dataset* dataset, const wsd_split_config* split,
                        const char* model_name, const char* metrics_path, double* accuracy) {
  return guarded([&] {
    require(model && emb && dataset && metrics_path, "NULL argument");
    const auto spec = to_split(split);
    const auto parts = split_dataset(dataset, split);
    const auto& m = model->model;
    const auto& matrix = emb->matrix;
    const auto metrics = wsd::evaluate(
        [&](const wsd::SentenceWindow& w) { return wsd::predict(m, w, matrix).label; }, parts.test,
        static_cast<std::size_t>(m.dims.classes));
    wsd::MetricsDocument doc;
    doc.model = model_name ? model_name : "lstm";
    doc.test_size = parts.test.size();
    doc.split_seed = spec.seed;
    doc.payload = metrics;
    wsd::write_metrics(doc, metrics_path);
    if (accuracy) *accuracy = metrics.accuracy;
  });
}

wsd_status wsd_repeat_training(const wsd_dataset* dataset, const wsd_embeddings* emb,
                               const wsd_split_config* split, const wsd_train_config* config,
                               int runs, uint64_t base_seed, int threads, const char* model_name,
                               const char* metrics_path, double* mean_accuracy) {
  return guarded([&] {
    require(dataset && emb && metrics_path, "NULL argument");
    const auto spec = to_split(split);
    const auto parts = split_dataset(dataset, split);
    auto experiment = std::make_shared<wsd::LstmExperiment>();
    experiment->dims = dims_for(emb->matrix, *dataset);
    experiment->config = to_train_config(config);
    const int T = experiment->dims.sequence_length;
    const int C = experiment->dims.classes;
    experiment->train = wsd::encode_examples(parts.train, emb->matrix, T, C);
    experiment->validation = wsd::encode_examples(parts.validation, emb->matrix, T, C);
    experiment->test = wsd::encode_examples(parts.test, emb->matrix, T, C);
    const auto summary =
        wsd::repeat_training(runs, wsd::lstm_seeded_run(experiment), base_seed, threads);
    wsd::MetricsDocument doc;
    doc.model = model_name ? model_name : "lstm";
    doc.test_size = parts.test.size();
    doc.split_seed = spec.seed;
    doc.payload = summary;
    wsd::write_metrics(doc, metrics_path);
    if (mean_accuracy) *mean_accuracy = summary.mean_accuracy;
  });
}

wsd_status wsd_ablate(const wsd_dataset* dataset, const wsd_embeddings* emb,
                      const wsd_split_config* split, const wsd_train_config* config,
                      const double* fractions, size_t n_fractions, int epochs,
                      const char* model_name, const char* metrics_path) {
  return guarded([&] {
    require(dataset && emb && fractions && metrics_path, "NULL argument");
    const auto spec = to_split(split);
    auto parts = split_dataset(dataset, split);
    auto pool = parts.train;
    pool.insert(pool.end(), parts.validation.begin(), parts.validation.end());
    wsd::AblationSpec ablation;
    ablation.train = pool;
    ablation.test = parts.test;
    ablation.subset_seed = spec.seed;
    ablation.num_classes = dataset->num_classes;
    ablation.trainer = wsd::lstm_subset_trainer(emb->matrix, to_train_config(config),
                                                static_cast<int>(dataset->num_classes));
    const auto curve = wsd::ablate_training_size(
        std::span<const double>(fractions, n_fractions), epochs, ablation);
    wsd::MetricsDocument doc;
    doc.model = model_name ? model_name : "lstm";
    doc.test_size = parts.test.size();
    doc.split_seed = spec.seed;
    doc.payload = curve;
    wsd::write_metrics(doc, metrics_path);
  });
}

}  // extern "C"
