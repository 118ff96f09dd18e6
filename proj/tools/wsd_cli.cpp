// wsd: command-line front end over libwsd.
//
// Subcommands map one-to-one onto pipeline stages. Each output file gets a
// sibling <out>.manifest.json recording the resolved configuration, paths,
// seeds, tool version and wall-clock duration.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "wsd/wsd.h"

namespace {

using json = nlohmann::ordered_json;

struct Failure {
  int code;
};

void check(wsd_status status, const std::string& what) {
  if (status == WSD_OK) return;
  std::cerr << "wsd: " << what << ": " << wsd_last_error() << " (" << wsd_status_name(status)
            << ")\n";
  throw Failure{1};
}

// "-" stands for the standard streams.
std::string in_path(const std::string& p) { return p == "-" ? "/dev/stdin" : p; }
std::string out_path(const std::string& p) { return p == "-" ? "/dev/stdout" : p; }

template <typename T, void (*Free)(T*)>
struct Handle {
  T* ptr = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(ptr); }
  T** out() { return &ptr; }
  T* get() const { return ptr; }
};

using Spec = Handle<wsd_spec, wsd_spec_free>;
using Dataset = Handle<wsd_dataset, wsd_dataset_free>;
using Embeddings = Handle<wsd_embeddings, wsd_embeddings_free>;
using Model = Handle<wsd_model, wsd_model_free>;
using History = Handle<wsd_history, wsd_history_free>;

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int thread_cap() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n <= 0) n = 1;
  if (const char* env = std::getenv("WSD_THREADS")) {
    try {
      const int cap = std::stoi(env);
      if (cap > 0 && cap < n) n = cap;
    } catch (const std::exception&) {
      std::cerr << "wsd: ignoring invalid WSD_THREADS='" << env << "'\n";
    }
  }
  return n;
}

// Options shared by the stages that split and train.
struct SplitOptions {
  std::uint64_t seed = 42;
  double test_frac = 0.2;
  double val_frac = 0.2;

  void add(CLI::App* app) {
    app->add_option("--split-seed", seed, "Seed of the stratified split");
    app->add_option("--test-frac", test_frac, "Held-out test fraction per class")
        ->check(CLI::Range(0.0, 1.0));
    app->add_option("--val-frac", val_frac, "Validation fraction of the training part")
        ->check(CLI::Range(0.0, 1.0));
  }
  wsd_split_config config() const { return {seed, test_frac, val_frac}; }
  json to_json() const {
    return {{"split_seed", seed}, {"test_fraction", test_frac}, {"validation_fraction", val_frac}};
  }
};

struct TrainOptions {
  int epochs = 40;
  int batch_size = 16;
  double lr = 0.001;
  std::string optimizer = "adam";
  int patience = 5;
  bool no_early_stopping = false;
  double clip = 5.0;
  std::uint64_t seed = 42;

  void add(CLI::App* app, int default_epochs) {
    epochs = default_epochs;
    app->add_option("--epochs", epochs, "Maximum training epochs")->check(CLI::PositiveNumber);
    app->add_option("--batch-size", batch_size, "Mini-batch size")->check(CLI::PositiveNumber);
    app->add_option("--lr", lr, "Learning rate")->check(CLI::PositiveNumber);
    app->add_option("--optimizer", optimizer, "adam or sgd")
        ->check(CLI::IsMember({"adam", "sgd"}));
    app->add_option("--patience", patience, "Early-stopping patience (epochs)")
        ->check(CLI::PositiveNumber);
    app->add_flag("--no-early-stopping", no_early_stopping, "Run all epochs, keep final weights");
    app->add_option("--clip", clip, "Gradient global-norm clip (0 disables)")
        ->check(CLI::NonNegativeNumber);
    app->add_option("--seed", seed, "Initialisation and shuffle seed");
  }
  wsd_train_config config() const {
    wsd_train_config c;
    wsd_train_config_default(&c);
    c.max_epochs = epochs;
    c.batch_size = batch_size;
    c.learning_rate = lr;
    c.optimizer = optimizer == "sgd" ? WSD_OPTIMIZER_SGD : WSD_OPTIMIZER_ADAM;
    c.patience = patience;
    c.early_stopping = no_early_stopping ? 0 : 1;
    c.gradient_clip_norm = clip;
    c.seed = seed;
    return c;
  }
  json to_json() const {
    return {{"max_epochs", epochs},          {"batch_size", batch_size},
            {"learning_rate", lr},           {"optimizer", optimizer},
            {"patience", patience},          {"early_stopping", !no_early_stopping},
            {"gradient_clip_norm", clip},    {"seed", seed}};
  }
};

class Manifest {
 public:
  explicit Manifest(std::string subcommand)
      : start_(std::chrono::steady_clock::now()), subcommand_(std::move(subcommand)) {}

  json config = json::object();
  json inputs = json::object();
  json seeds = json::object();

  // Writes <out>.manifest.json; nothing when the output is stdout.
  void write(const std::string& output, const std::string& role = "output") const {
    if (output == "-") return;
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    json doc = {{"subcommand", subcommand_},
                {"version", wsd_version()},
                {"config", config},
                {"inputs", inputs},
                {"outputs", {{role, output}}},
                {"seeds", seeds},
                {"duration_seconds", seconds},
                {"timestamp", utc_timestamp()}};
    const std::string path = output + ".manifest.json";
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << doc.dump(2) << '\n';
    out.flush();
    if (!out) {
      std::cerr << "wsd: cannot write manifest '" << path << "'\n";
      throw Failure{1};
    }
  }

 private:
  std::chrono::steady_clock::time_point start_;
  std::string subcommand_;
};

std::vector<const char*> c_strings(const std::vector<std::string>& v) {
  std::vector<const char*> out;
  out.reserve(v.size());
  for (const auto& s : v) out.push_back(s.c_str());
  return out;
}

void load_common(const std::string& spec_path, const std::string& dataset_path,
                 const std::string& embeddings_path, Spec& spec, Dataset& dataset,
                 Embeddings& emb) {
  check(wsd_spec_load(spec_path.c_str(), spec.out()), "loading spec");
  check(wsd_dataset_load(in_path(dataset_path).c_str(), spec.get(), dataset.out()),
        "loading dataset");
  check(wsd_embeddings_load(embeddings_path.c_str(), emb.out()), "loading embeddings");
}

void print_epoch(const wsd_epoch_record* r, void*) {
  std::printf("epoch %d train_loss %.6f val_loss %.6f val_acc %.6f\n", r->epoch, r->train_loss,
              r->validation_loss, r->validation_accuracy);
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Homonym word-sense disambiguation toolkit"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(wsd_version()));

  // filter
  std::vector<std::string> filter_inputs;
  std::string filter_out;
  bool raw_lines = false;
  auto* filter = app.add_subcommand("filter", "Keep Georgian-script lines of raw text");
  filter->add_option("inputs", filter_inputs, "Input text files ('-' for stdin)")->required();
  filter->add_option("--out", filter_out, "Output path ('-' for stdout)")->required();
  filter->add_flag("--raw-lines", raw_lines, "Write kept lines verbatim instead of tokenised sentences");

  // extract
  std::vector<std::string> extract_inputs;
  std::string extract_out, extract_spec;
  auto* extract = app.add_subcommand("extract", "Extract windows around the homonym");
  extract->add_option("inputs", extract_inputs, "Input text files ('-' for stdin)")->required();
  extract->add_option("--spec", extract_spec, "Homonym spec file")->required();
  extract->add_option("--out", extract_out, "Dataset output path ('-' for stdout)")->required();

  // train-embeddings
  std::string emb_corpus, emb_out;
  wsd_embedding_config emb_cfg;
  wsd_embedding_config_default(&emb_cfg);
  auto* train_emb = app.add_subcommand("train-embeddings", "Train skip-gram embeddings");
  train_emb->add_option("corpus", emb_corpus, "Tokenised corpus, one sentence per line")
      ->required();
  train_emb->add_option("--out", emb_out, "Embedding file")->required();
  train_emb->add_option("--dim", emb_cfg.dimension, "Vector dimension")->check(CLI::PositiveNumber);
  train_emb->add_option("--window", emb_cfg.window, "Maximum context radius")
      ->check(CLI::PositiveNumber);
  train_emb->add_option("--min-count", emb_cfg.min_count, "Minimum word frequency");
  train_emb->add_option("--epochs", emb_cfg.epochs, "Training epochs (0 saves the initialisation)")
      ->check(CLI::NonNegativeNumber);
  train_emb->add_option("--negative", emb_cfg.negative_samples, "Negative samples per pair")
      ->check(CLI::NonNegativeNumber);
  train_emb->add_option("--lr", emb_cfg.learning_rate, "Initial learning rate")
      ->check(CLI::PositiveNumber);
  train_emb->add_option("--min-lr", emb_cfg.min_learning_rate, "Final learning rate")
      ->check(CLI::NonNegativeNumber);
  train_emb->add_option("--seed", emb_cfg.seed, "Random seed");

  // train
  std::string train_data, train_emb_path, train_spec, train_out;
  SplitOptions train_split;
  TrainOptions train_opts;
  auto* train = app.add_subcommand("train", "Split a labelled dataset and train the classifier");
  train->add_option("dataset", train_data, "Labelled dataset file")->required();
  train->add_option("--embeddings", train_emb_path, "Embedding file")->required();
  train->add_option("--spec", train_spec, "Homonym spec file")->required();
  train->add_option("--out", train_out, "Model output path")->required();
  train_split.add(train);
  train_opts.add(train, 40);

  // evaluate
  std::string eval_data, eval_model, eval_emb, eval_spec, eval_out, eval_name = "lstm";
  int eval_runs = 1;
  SplitOptions eval_split;
  TrainOptions eval_opts;
  auto* evaluate = app.add_subcommand(
      "evaluate", "Evaluate a model on the test split, or retrain --runs times and aggregate");
  evaluate->add_option("dataset", eval_data, "Labelled dataset file")->required();
  evaluate->add_option("--model", eval_model, "Model file (used when --runs is 1)");
  evaluate->add_option("--embeddings", eval_emb, "Embedding file")->required();
  evaluate->add_option("--spec", eval_spec, "Homonym spec file")->required();
  evaluate->add_option("--out", eval_out, "Metrics JSON path")->required();
  evaluate->add_option("--runs", eval_runs, "Number of seeded training runs")
      ->check(CLI::PositiveNumber);
  evaluate->add_option("--name", eval_name, "Model name recorded in the metrics");
  eval_split.add(evaluate);
  eval_opts.add(evaluate, 40);

  // ablate
  std::string abl_data, abl_emb, abl_spec, abl_out, abl_name = "lstm";
  std::vector<double> fractions{0.1, 0.25, 0.5, 1.0};
  SplitOptions abl_split;
  TrainOptions abl_opts;
  auto* ablate = app.add_subcommand("ablate", "Accuracy versus amount of training data");
  ablate->add_option("dataset", abl_data, "Labelled dataset file")->required();
  ablate->add_option("--embeddings", abl_emb, "Embedding file")->required();
  ablate->add_option("--spec", abl_spec, "Homonym spec file")->required();
  ablate->add_option("--out", abl_out, "Metrics JSON path")->required();
  ablate->add_option("--fractions", fractions, "Training fractions a,b,c (strictly increasing)")
      ->delimiter(',');
  ablate->add_option("--name", abl_name, "Model name recorded in the metrics");
  abl_split.add(ablate);
  abl_opts.add(ablate, 10);

  // predict
  std::string pred_sentence, pred_model, pred_emb, pred_spec;
  auto* predict = app.add_subcommand(
      "predict", "Predict the sense of the homonym in a sentence (or each stdin line)");
  predict->add_option("sentence", pred_sentence, "Sentence text; read from stdin when omitted");
  predict->add_option("--model", pred_model, "Model file")->required();
  predict->add_option("--embeddings", pred_emb, "Embedding file")->required();
  predict->add_option("--spec", pred_spec, "Homonym spec file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*filter) {
      Manifest m("filter");
      std::vector<std::string> inputs;
      for (const auto& p : filter_inputs) inputs.push_back(in_path(p));
      const auto ptrs = c_strings(inputs);
      std::uint64_t kept = 0, written = 0;
      check(wsd_filter_corpus(ptrs.data(), ptrs.size(), out_path(filter_out).c_str(),
                              raw_lines ? 1 : 0, &kept, &written),
            "filter");
      std::cerr << "kept " << kept << " lines, wrote " << written << " records\n";
      m.config = {{"raw_lines", raw_lines}};
      m.inputs = {{"texts", filter_inputs}};
      m.write(filter_out);
    } else if (*extract) {
      Manifest m("extract");
      Spec spec;
      check(wsd_spec_load(extract_spec.c_str(), spec.out()), "loading spec");
      std::vector<std::string> inputs;
      for (const auto& p : extract_inputs) inputs.push_back(in_path(p));
      const auto ptrs = c_strings(inputs);
      std::uint64_t n = 0;
      check(wsd_extract_windows(ptrs.data(), ptrs.size(), spec.get(),
                                out_path(extract_out).c_str(), &n),
            "extract");
      std::cerr << "wrote " << n << " windows\n";
      m.inputs = {{"texts", extract_inputs}, {"spec", extract_spec}};
      m.write(extract_out);
    } else if (*train_emb) {
      Manifest m("train-embeddings");
      Embeddings emb;
      check(wsd_embeddings_train(in_path(emb_corpus).c_str(), &emb_cfg, emb.out()),
            "training embeddings");
      check(wsd_embeddings_save(emb.get(), emb_out.c_str()), "saving embeddings");
      std::cerr << "vocabulary " << wsd_embeddings_vocab_size(emb.get()) << " words, dimension "
                << wsd_embeddings_dimension(emb.get()) << '\n';
      m.config = {{"dimension", emb_cfg.dimension},
                  {"window", emb_cfg.window},
                  {"min_count", emb_cfg.min_count},
                  {"epochs", emb_cfg.epochs},
                  {"negative_samples", emb_cfg.negative_samples},
                  {"learning_rate", emb_cfg.learning_rate},
                  {"min_learning_rate", emb_cfg.min_learning_rate},
                  {"seed", emb_cfg.seed}};
      m.inputs = {{"corpus", emb_corpus}};
      m.seeds = {{"seed", emb_cfg.seed}};
      m.write(emb_out);
    } else if (*train) {
      Manifest m("train");
      Spec spec;
      Dataset data;
      Embeddings emb;
      load_common(train_spec, train_data, train_emb_path, spec, data, emb);
      const auto split = train_split.config();
      const auto cfg = train_opts.config();
      Model model;
      History history;
      check(wsd_train(data.get(), emb.get(), &split, &cfg, print_epoch, nullptr, model.out(),
                      history.out()),
            "training");
      std::printf("best_epoch %d stopped_early %d parameters %zu\n",
                  wsd_history_best_epoch(history.get()), wsd_history_stopped_early(history.get()),
                  wsd_model_parameter_count(model.get()));
      check(wsd_model_save(model.get(), train_out.c_str()), "saving model");
      m.config = {{"train", train_opts.to_json()}, {"split", train_split.to_json()}};
      m.inputs = {{"dataset", train_data}, {"embeddings", train_emb_path}, {"spec", train_spec}};
      m.seeds = {{"seed", train_opts.seed}, {"split_seed", train_split.seed}};
      m.write(train_out);
    } else if (*evaluate) {
      Manifest m("evaluate");
      Spec spec;
      Dataset data;
      Embeddings emb;
      load_common(eval_spec, eval_data, eval_emb, spec, data, emb);
      const auto split = eval_split.config();
      if (eval_runs == 1) {
        if (eval_model.empty()) {
          std::cerr << "wsd: evaluate: --model is required when --runs is 1\n";
          return 2;
        }
        Model model;
        check(wsd_model_load(eval_model.c_str(), model.out()), "loading model");
        double acc = 0.0;
        check(wsd_evaluate(model.get(), emb.get(), data.get(), &split, eval_name.c_str(),
                           eval_out.c_str(), &acc),
              "evaluate");
        std::printf("accuracy %.6f\n", acc);
        m.inputs = {{"dataset", eval_data}, {"model", eval_model}, {"embeddings", eval_emb},
                    {"spec", eval_spec}};
        m.config = {{"runs", 1}, {"split", eval_split.to_json()}};
      } else {
        const auto cfg = eval_opts.config();
        const int threads = thread_cap();
        double mean = 0.0;
        check(wsd_repeat_training(data.get(), emb.get(), &split, &cfg, eval_runs, eval_opts.seed,
                                  threads, eval_name.c_str(), eval_out.c_str(), &mean),
              "repeated training");
        std::printf("mean_accuracy %.6f over %d runs\n", mean, eval_runs);
        m.inputs = {{"dataset", eval_data}, {"embeddings", eval_emb}, {"spec", eval_spec}};
        m.config = {{"runs", eval_runs},
                    {"threads", threads},
                    {"train", eval_opts.to_json()},
                    {"split", eval_split.to_json()}};
        m.seeds = {{"base_seed", eval_opts.seed}};
      }
      m.seeds["split_seed"] = eval_split.seed;
      m.write(eval_out);
    } else if (*ablate) {
      Manifest m("ablate");
      Spec spec;
      Dataset data;
      Embeddings emb;
      load_common(abl_spec, abl_data, abl_emb, spec, data, emb);
      const auto split = abl_split.config();
      const auto cfg = abl_opts.config();
      check(wsd_ablate(data.get(), emb.get(), &split, &cfg, fractions.data(), fractions.size(),
                       abl_opts.epochs, abl_name.c_str(), abl_out.c_str()),
            "ablation");
      m.inputs = {{"dataset", abl_data}, {"embeddings", abl_emb}, {"spec", abl_spec}};
      m.config = {{"fractions", fractions},
                  {"train", abl_opts.to_json()},
                  {"split", abl_split.to_json()}};
      m.seeds = {{"seed", abl_opts.seed}, {"split_seed", abl_split.seed}};
      m.write(abl_out);
    } else if (*predict) {
      Spec spec;
      Embeddings emb;
      Model model;
      check(wsd_spec_load(pred_spec.c_str(), spec.out()), "loading spec");
      check(wsd_embeddings_load(pred_emb.c_str(), emb.out()), "loading embeddings");
      check(wsd_model_load(pred_model.c_str(), model.out()), "loading model");
      const auto classes = static_cast<std::size_t>(wsd_model_class_count(model.get()));
      std::vector<float> probs(classes);

      auto run = [&](const std::string& sentence) {
        int label = -1;
        check(wsd_predict_sentence(model.get(), emb.get(), spec.get(), sentence.c_str(), &label,
                                   probs.data(), probs.size()),
              "predict");
        const char* gloss = wsd_spec_sense_gloss(spec.get(), static_cast<std::size_t>(label));
        std::printf("%d\t%s", label, gloss ? gloss : "?");
        for (float p : probs) std::printf("\t%.6f", static_cast<double>(p));
        std::printf("\n");
      };
      if (predict->count("sentence") > 0) {
        run(pred_sentence);
      } else {
        std::string line;
        bool any = false;
        while (std::getline(std::cin, line)) {
          if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
          any = true;
          run(line);
        }
        if (!any) {
          std::cerr << "wsd: predict: no sentence given\n";
          return 1;
        }
      }
    }
  } catch (const Failure& f) {
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "wsd: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
