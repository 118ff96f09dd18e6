#pragma once

// Accuracy/precision/recall metrics, the seeded repetition protocol, the
// training-size ablation and the JSON metrics document shared by every
// model family.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "wsd/corpus.hpp"
#include "wsd/embeddings.hpp"
#include "wsd/trainer.hpp"

namespace wsd {

struct ClassStats {
  double precision = 0.0;
  double recall = 0.0;
  std::size_t support = 0;

  friend bool operator==(const ClassStats&, const ClassStats&) = default;
};

struct Metrics {
  double accuracy = 0.0;
  std::vector<ClassStats> per_class;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::size_t n_examples = 0;

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

/// Builds metrics from paired label lists. Precision/recall are 0 when their
/// denominator is 0.
Metrics metrics_from_predictions(std::span<const int> truth, std::span<const int> predicted,
                                 std::size_t num_classes);

using WindowPredictor = std::function<int(const SentenceWindow&)>;

Metrics evaluate(const WindowPredictor& predict_fn, std::span<const LabeledExample> test,
                 std::size_t num_classes = 3);

// ---------------------------------------------------------------------------
// Repetition protocol

struct RunResult {
  std::uint64_t seed = 0;
  double accuracy = 0.0;

  friend bool operator==(const RunResult&, const RunResult&) = default;
};

struct RepetitionSummary {
  std::size_t runs = 0;
  double mean_accuracy = 0.0;
  double min_accuracy = 0.0;
  double max_accuracy = 0.0;
  double std_accuracy = 0.0;  // sample standard deviation; 0 for one run
  std::vector<RunResult> per_run;

  friend bool operator==(const RepetitionSummary&, const RepetitionSummary&) = default;
};

RepetitionSummary summarize_runs(std::vector<RunResult> runs);

/// One full train+evaluate cycle for a given seed; returns test accuracy.
using SeededRun = std::function<double(std::uint64_t seed)>;

/// Runs seeds base_seed .. base_seed+n-1, at most `threads` at a time, and
/// aggregates in seed order. A failing run aborts with its index.
RepetitionSummary repeat_training(int n, const SeededRun& run, std::uint64_t base_seed,
                                  int threads = 1);

/// Fixed data split; only the initialisation and shuffle seed vary per run.
struct LstmExperiment {
  EncodedExamples train;
  EncodedExamples validation;
  EncodedExamples test;
  LstmDims dims;
  ClassifierTrainConfig config;
};

SeededRun lstm_seeded_run(std::shared_ptr<const LstmExperiment> experiment);

// ---------------------------------------------------------------------------
// Training-size ablation

struct AblationPoint {
  double fraction = 0.0;
  std::size_t train_size = 0;
  double accuracy = 0.0;
  std::uint64_t test_fingerprint = 0;

  friend bool operator==(const AblationPoint&, const AblationPoint&) = default;
};

struct AblationCurve {
  std::vector<AblationPoint> points;
  int epochs_per_point = 10;

  friend bool operator==(const AblationCurve&, const AblationCurve&) = default;
};

/// Per-class seeded subset of round(count * fraction) examples, in input
/// order. Throws when a class would be left empty.
std::vector<LabeledExample> stratified_subset(std::span<const LabeledExample> examples,
                                              double fraction, std::uint64_t seed,
                                              std::size_t num_classes = 3);

/// Trains on `train` for exactly `epochs` epochs and returns accuracy on `test`.
using SubsetTrainer = std::function<double(std::span<const LabeledExample> train,
                                           std::span<const LabeledExample> test, int epochs)>;

struct AblationSpec {
  std::span<const LabeledExample> train;
  std::span<const LabeledExample> test;
  SubsetTrainer trainer;
  std::uint64_t subset_seed = 42;
  std::size_t num_classes = 3;
};

/// Fractions must be in (0, 1] and strictly increasing.
AblationCurve ablate_training_size(std::span<const double> fractions, int epochs,
                                   const AblationSpec& spec);

/// LSTM trainer with early stopping disabled. `matrix` must outlive the
/// returned trainer.
SubsetTrainer lstm_subset_trainer(const EmbeddingMatrix& matrix, ClassifierTrainConfig config,
                                  int num_classes = 3);

// ---------------------------------------------------------------------------
// Metrics document (JSON): top-level "kind" in {"metrics", "repetition",
// "ablation"}, "model", "test_size", optional "split_seed", and the
// kind-specific payload.

struct MetricsDocument {
  std::string model;
  std::size_t test_size = 0;
  std::optional<std::uint64_t> split_seed;
  std::variant<Metrics, RepetitionSummary, AblationCurve> payload;

  std::string_view kind() const;
  friend bool operator==(const MetricsDocument&, const MetricsDocument&) = default;
};

std::string to_json(const MetricsDocument& doc);
MetricsDocument parse_metrics_document(std::string_view json_text);

void write_metrics(const MetricsDocument& doc, const std::filesystem::path& path);
MetricsDocument read_metrics(const std::filesystem::path& path);

}  // namespace wsd
