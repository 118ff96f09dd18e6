#include "wsd/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "wsd/error.hpp"
#include "wsd/random.hpp"

namespace wsd {

using nlohmann::json;

Metrics metrics_from_predictions(std::span<const int> truth, std::span<const int> predicted,
                                 std::size_t num_classes) {
  if (truth.size() != predicted.size())
    throw InvalidArgument("truth and prediction lists differ in length");
  if (truth.empty()) throw InvalidArgument("cannot compute metrics on an empty set");
  Metrics m;
  m.n_examples = truth.size();
  m.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = truth[i];
    const auto p = predicted[i];
    if (t < 0 || static_cast<std::size_t>(t) >= num_classes || p < 0 ||
        static_cast<std::size_t>(p) >= num_classes)
      throw InvalidArgument("label outside 0.." + std::to_string(num_classes - 1) +
                            " at position " + std::to_string(i));
    ++m.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
  std::size_t trace = 0;
  m.per_class.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    trace += m.confusion[c][c];
    std::size_t row = 0, col = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
      row += m.confusion[c][k];
      col += m.confusion[k][c];
    }
    auto& s = m.per_class[c];
    s.support = row;
    s.recall = row ? static_cast<double>(m.confusion[c][c]) / static_cast<double>(row) : 0.0;
    s.precision = col ? static_cast<double>(m.confusion[c][c]) / static_cast<double>(col) : 0.0;
  }
  m.accuracy = static_cast<double>(trace) / static_cast<double>(m.n_examples);
  return m;
}

Metrics evaluate(const WindowPredictor& predict_fn, std::span<const LabeledExample> test,
                 std::size_t num_classes) {
  std::vector<int> truth, predicted;
  truth.reserve(test.size());
  predicted.reserve(test.size());
  for (const auto& ex : test) {
    if (ex.label.is_other()) throw InvalidArgument("OTHER label in evaluation set");
    truth.push_back(ex.label.value);
    predicted.push_back(predict_fn(ex.window));
  }
  return metrics_from_predictions(truth, predicted, num_classes);
}

// ---------------------------------------------------------------------------
// Repetitions

RepetitionSummary summarize_runs(std::vector<RunResult> runs) {
  if (runs.empty()) throw InvalidArgument("no runs to summarise");
  RepetitionSummary s;
  s.runs = runs.size();
  double sum = 0.0;
  s.min_accuracy = runs.front().accuracy;
  s.max_accuracy = runs.front().accuracy;
  for (const auto& r : runs) {
    sum += r.accuracy;
    s.min_accuracy = std::min(s.min_accuracy, r.accuracy);
    s.max_accuracy = std::max(s.max_accuracy, r.accuracy);
  }
  const double n = static_cast<double>(runs.size());
  s.mean_accuracy = std::clamp(sum / n, s.min_accuracy, s.max_accuracy);
  if (runs.size() > 1) {
    double sq = 0.0;
    for (const auto& r : runs) sq += (r.accuracy - s.mean_accuracy) * (r.accuracy - s.mean_accuracy);
    s.std_accuracy = std::sqrt(sq / (n - 1.0));
  }
  s.per_run = std::move(runs);
  return s;
}

RepetitionSummary repeat_training(int n, const SeededRun& run, std::uint64_t base_seed,
                                  int threads) {
  if (n < 1) throw InvalidArgument("repetition count must be >= 1");
  std::vector<RunResult> results(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) results[static_cast<std::size_t>(i)].seed = base_seed + static_cast<std::uint64_t>(i);

  std::atomic<int> next{0};
  std::mutex error_mutex;
  int failed_index = -1;
  std::exception_ptr failure;

  auto worker = [&] {
    for (int i = next++; i < n; i = next++) {
      {
        std::lock_guard lock(error_mutex);
        if (failure) return;
      }
      try {
        auto& r = results[static_cast<std::size_t>(i)];
        r.accuracy = run(r.seed);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!failure || i < failed_index) {
          failure = std::current_exception();
          failed_index = i;
        }
      }
    }
  };
  const int workers = std::clamp(threads, 1, n);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) {
    try {
      std::rethrow_exception(failure);
    } catch (const std::exception& e) {
      throw Error("repetition run " + std::to_string(failed_index) + " (seed " +
                  std::to_string(base_seed + static_cast<std::uint64_t>(failed_index)) +
                  ") failed: " + e.what());
    }
  }
  return summarize_runs(std::move(results));
}

SeededRun lstm_seeded_run(std::shared_ptr<const LstmExperiment> experiment) {
  return [experiment](std::uint64_t seed) {
    auto config = experiment->config;
    config.seed = seed;
    const auto trained =
        train_classifier(experiment->train, experiment->validation, experiment->dims, config);
    const auto predicted = predict_all(trained.model, experiment->test);
    return metrics_from_predictions(experiment->test.labels, predicted,
                                    static_cast<std::size_t>(experiment->dims.classes))
        .accuracy;
  };
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<LabeledExample> stratified_subset(std::span<const LabeledExample> examples,
                                              double fraction, std::uint64_t seed,
                                              std::size_t num_classes) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw InvalidArgument("fraction must lie in (0, 1]");
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    if (ex.label.is_other() || static_cast<std::size_t>(ex.label.value) >= num_classes)
      throw InvalidArgument("stratified_subset: label out of range at index " + std::to_string(i));
    by_class[static_cast<std::size_t>(ex.label.value)].push_back(i);
  }
  std::vector<bool> keep(examples.size(), false);
  Rng rng(seed);
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& members = by_class[c];
    const auto n = held_out_count(members.size(), fraction);
    if (n == 0)
      throw InvalidArgument("fraction " + std::to_string(fraction) + " leaves class " +
                            std::to_string(c) + " empty");
    rng.shuffle(std::span(members));
    for (std::size_t k = 0; k < n; ++k) keep[members[k]] = true;
  }
  std::vector<LabeledExample> out;
  for (std::size_t i = 0; i < examples.size(); ++i)
    if (keep[i]) out.push_back(examples[i]);
  return out;
}

AblationCurve ablate_training_size(std::span<const double> fractions, int epochs,
                                   const AblationSpec& spec) {
  if (fractions.empty()) throw InvalidArgument("no ablation fractions given");
  if (epochs < 1) throw InvalidArgument("ablation epochs must be >= 1");
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    if (!(fractions[i] > 0.0 && fractions[i] <= 1.0))
      throw InvalidArgument("fraction " + std::to_string(fractions[i]) + " outside (0, 1]");
    if (i > 0 && !(fractions[i] > fractions[i - 1]))
      throw InvalidArgument("fractions must be strictly increasing without duplicates");
  }
  if (!spec.trainer) throw InvalidArgument("ablation needs a trainer");
  // Validate every subset up front so a bad fraction fails before any training.
  std::vector<std::vector<LabeledExample>> subsets;
  for (double f : fractions)
    subsets.push_back(stratified_subset(spec.train, f, spec.subset_seed, spec.num_classes));

  AblationCurve curve;
  curve.epochs_per_point = epochs;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    AblationPoint p;
    p.fraction = fractions[i];
    p.train_size = subsets[i].size();
    p.test_fingerprint = dataset_fingerprint(spec.test);
    p.accuracy = spec.trainer(subsets[i], spec.test, epochs);
    curve.points.push_back(p);
  }
  return curve;
}

SubsetTrainer lstm_subset_trainer(const EmbeddingMatrix& matrix, ClassifierTrainConfig config,
                                  int num_classes) {
  return [&matrix, config, num_classes](std::span<const LabeledExample> train,
                           std::span<const LabeledExample> test, int epochs) {
    auto cfg = config;
    cfg.max_epochs = epochs;
    cfg.early_stopping = false;
    LstmDims dims;
    dims.input_dim = matrix.dimension;
    dims.classes = num_classes;
    const auto enc_train = encode_examples(train, matrix, dims.sequence_length, dims.classes);
    const auto enc_test = encode_examples(test, matrix, dims.sequence_length, dims.classes);
    const auto trained = train_classifier(enc_train, EncodedExamples{}, dims, cfg);
    const auto predicted = predict_all(trained.model, enc_test);
    return metrics_from_predictions(enc_test.labels, predicted,
                                    static_cast<std::size_t>(dims.classes))
        .accuracy;
  };
}

// ---------------------------------------------------------------------------
// JSON

namespace {

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << v;
  return s.str();
}

std::uint64_t parse_hex64(const std::string& s) {
  std::size_t used = 0;
  std::uint64_t v = 0;
  try {
    v = std::stoull(s, &used, 16);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size()) throw FormatError("invalid fingerprint '" + s + "'");
  return v;
}

json metrics_json(const Metrics& m) {
  json per_class = json::array();
  for (const auto& c : m.per_class)
    per_class.push_back({{"precision", c.precision}, {"recall", c.recall}, {"support", c.support}});
  return {{"accuracy", m.accuracy},
          {"n_examples", m.n_examples},
          {"per_class", per_class},
          {"confusion", m.confusion}};
}

Metrics metrics_from_json(const json& j) {
  Metrics m;
  m.accuracy = j.at("accuracy").get<double>();
  m.n_examples = j.at("n_examples").get<std::size_t>();
  for (const auto& c : j.at("per_class"))
    m.per_class.push_back({c.at("precision").get<double>(), c.at("recall").get<double>(),
                           c.at("support").get<std::size_t>()});
  m.confusion = j.at("confusion").get<std::vector<std::vector<std::size_t>>>();
  return m;
}

}  // namespace

std::string_view MetricsDocument::kind() const {
  switch (payload.index()) {
    case 0: return "metrics";
    case 1: return "repetition";
    default: return "ablation";
  }
}

std::string to_json(const MetricsDocument& doc) {
  json j;
  j["kind"] = doc.kind();
  j["model"] = doc.model;
  j["test_size"] = doc.test_size;
  if (doc.split_seed) j["split_seed"] = *doc.split_seed;
  if (const auto* m = std::get_if<Metrics>(&doc.payload)) {
    j.update(metrics_json(*m));
  } else if (const auto* r = std::get_if<RepetitionSummary>(&doc.payload)) {
    j["runs"] = r->runs;
    j["mean_accuracy"] = r->mean_accuracy;
    j["min_accuracy"] = r->min_accuracy;
    j["max_accuracy"] = r->max_accuracy;
    j["std_accuracy"] = r->std_accuracy;
    json runs = json::array();
    for (const auto& run : r->per_run) runs.push_back({{"seed", run.seed}, {"accuracy", run.accuracy}});
    j["per_run"] = runs;
  } else {
    const auto& c = std::get<AblationCurve>(doc.payload);
    j["epochs_per_point"] = c.epochs_per_point;
    json points = json::array();
    for (const auto& p : c.points)
      points.push_back({{"fraction", p.fraction},
                        {"train_size", p.train_size},
                        {"accuracy", p.accuracy},
                        {"test_fingerprint", hex64(p.test_fingerprint)}});
    j["points"] = points;
  }
  // Doubles are emitted in shortest round-trip form, so no digit is lost.
  return j.dump(2) + "\n";
}

MetricsDocument parse_metrics_document(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("metrics document is not valid JSON: ") + e.what());
  }
  try {
    MetricsDocument doc;
    const auto kind = j.at("kind").get<std::string>();
    doc.model = j.at("model").get<std::string>();
    doc.test_size = j.at("test_size").get<std::size_t>();
    if (j.contains("split_seed")) doc.split_seed = j.at("split_seed").get<std::uint64_t>();
    if (kind == "metrics") {
      doc.payload = metrics_from_json(j);
    } else if (kind == "repetition") {
      RepetitionSummary r;
      r.runs = j.at("runs").get<std::size_t>();
      r.mean_accuracy = j.at("mean_accuracy").get<double>();
      r.min_accuracy = j.at("min_accuracy").get<double>();
      r.max_accuracy = j.at("max_accuracy").get<double>();
      r.std_accuracy = j.at("std_accuracy").get<double>();
      for (const auto& run : j.at("per_run"))
        r.per_run.push_back({run.at("seed").get<std::uint64_t>(), run.at("accuracy").get<double>()});
      if (r.per_run.size() != r.runs) throw FormatError("repetition: runs != length of per_run");
      doc.payload = std::move(r);
    } else if (kind == "ablation") {
      AblationCurve c;
      c.epochs_per_point = j.at("epochs_per_point").get<int>();
      for (const auto& p : j.at("points"))
        c.points.push_back({p.at("fraction").get<double>(), p.at("train_size").get<std::size_t>(),
                            p.at("accuracy").get<double>(),
                            parse_hex64(p.at("test_fingerprint").get<std::string>())});
      doc.payload = std::move(c);
    } else {
      throw FormatError("unknown metrics document kind '" + kind + "'");
    }
    return doc;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed metrics document: ") + e.what());
  }
}

void write_metrics(const MetricsDocument& doc, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << to_json(doc);
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

MetricsDocument read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open metrics: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_metrics_document(buf.str());
}

}  // namespace wsd
