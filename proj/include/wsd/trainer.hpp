#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "wsd/corpus.hpp"
#include "wsd/embeddings.hpp"
#include "wsd/lstm.hpp"

namespace wsd {

enum class OptimizerKind { kAdam, kSgd };

struct ClassifierTrainConfig {
  int max_epochs = 40;
  int batch_size = 16;
  double learning_rate = 0.001;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Epochs without validation-loss improvement before stopping.
  int early_stopping_patience = 5;
  /// When false, runs exactly max_epochs and returns the final weights.
  bool early_stopping = true;
  std::uint64_t seed = 42;
  double gradient_clip_norm = 5.0;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double validation_accuracy = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 1-based; 0 when no validation data
  bool stopped_early = false;
};

struct TrainedClassifier {
  LstmModel model;
  TrainingHistory history;
};

/// Embedded examples ready for batching.
struct EncodedExamples {
  std::vector<RowMatrix<float>> inputs;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

/// Embeds every window; OTHER labels are rejected.
EncodedExamples encode_examples(std::span<const LabeledExample> examples,
                                const EmbeddingMatrix& matrix, int sequence_length,
                                int num_classes);

/// Glorot-uniform weights per gate block, forget-gate bias 1, other biases 0.
LstmModel initialize_model(const LstmDims& dims, std::uint64_t seed);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch training with per-epoch validation and early stopping on
/// validation loss. Returns the weights of the best validation epoch (or the
/// final weights when early stopping is disabled).
TrainedClassifier train_classifier(const EncodedExamples& train,
                                   const EncodedExamples& validation, const LstmDims& dims,
                                   const ClassifierTrainConfig& config,
                                   const EpochCallback& on_epoch = {});

TrainedClassifier train_classifier(std::span<const LabeledExample> train,
                                   std::span<const LabeledExample> validation,
                                   const EmbeddingMatrix& matrix,
                                   const ClassifierTrainConfig& config,
                                   const EpochCallback& on_epoch = {});

struct LossAccuracy {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Mean cross-entropy and argmax accuracy over a full set, in batches.
LossAccuracy evaluate_loss_accuracy(const LstmModel& model, const EncodedExamples& data,
                                    int batch_size = 256);

/// Argmax predictions for every encoded example.
std::vector<int> predict_all(const LstmModel& model, const EncodedExamples& data,
                             int batch_size = 256);

}  // namespace wsd
