#include <array>
#include <cstdio>
#include <sstream>
#include <sys/wait.h>

#include "doctest.h"
#include "json.hpp"
#include "scratch.hpp"
#include "synthetic.hpp"
#include "wsd/corpus.hpp"
#include "wsd/eval.hpp"
#include "wsd/lstm.hpp"

using namespace wsd::testing;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

/// Runs the CLI with `args` (already quoted), capturing stdout.
Result cli(const std::string& args, const std::string& stdin_text = {}) {
  std::string cmd = quote(WSD_CLI_PATH) + " " + args + " 2>/dev/null";
  ScratchDir tmp("wsd-cli-in");
  if (!stdin_text.empty() || args.find("predict") == 0) {
    write_file(tmp / "stdin.txt", stdin_text);
    cmd += " < " + quote((tmp / "stdin.txt").string());
  }
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string p(const fs::path& path) { return quote(path.string()); }

const char* kSpecText =
    "lemma ბარი\n"
    "form ბარში\nform ბარს\nform ბარის\nform ბარით\n"
    "sense 0 shovel ნიჩაბი\nsense 1 lowland დაბლობი\nsense 2 cafe კაფე\n";

const std::string kEmbArgs = "--dim 16 --epochs 2 --min-count 1";
const std::string kTrainArgs = "--epochs 3 --patience 2";

/// Spec, dataset, corpus, embeddings and model produced once through the CLI.
struct Fixture {
  ScratchDir dir{"wsd-cli"};
  fs::path spec, dataset, corpus, emb, model;

  Fixture() {
    spec = dir / "bari.spec";
    dataset = dir / "data.tsv";
    corpus = dir / "corpus.txt";
    emb = dir / "emb.bin";
    model = dir / "model.bin";
    write_file(spec, kSpecText);
    SyntheticConfig sc;
    sc.windows = 600;
    const auto data = generate_synthetic(sc);
    wsd::write_dataset(dataset, data);
    std::string text;
    for (const auto& s : window_sentences(data)) {
      for (const auto& w : s) text += w + " ";
      text += "\n";
    }
    write_file(corpus, text);
    REQUIRE(cli("train-embeddings " + p(corpus) + " --out " + p(emb) + " " + kEmbArgs).code == 0);
    REQUIRE(cli("train " + p(dataset) + " --embeddings " + p(emb) + " --spec " + p(spec) +
                " --out " + p(model) + " " + kTrainArgs)
                .code == 0);
  }

  std::string common() const { return "--embeddings " + p(emb) + " --spec " + p(spec); }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

nlohmann::json read_json(const fs::path& path) { return nlohmann::json::parse(read_file(path)); }

}  // namespace

TEST_CASE("help lists subcommands and defaults") {
  const auto top = cli("--help");
  CHECK(top.code == 0);
  for (const char* sub : {"filter", "extract", "train-embeddings", "train", "evaluate", "ablate",
                          "predict"})
    CHECK(top.out.find(sub) != std::string::npos);

  const auto emb = cli("train-embeddings --help");
  CHECK(emb.code == 0);
  for (const char* needle : {"--dim", "128", "--window", "10", "--min-count", "--epochs", "20"})
    CHECK(emb.out.find(needle) != std::string::npos);

  const auto train = cli("train --help");
  for (const char* needle : {"--epochs", "40", "--patience", "5", "--batch-size", "16"})
    CHECK(train.out.find(needle) != std::string::npos);
  CHECK(cli("ablate --help").out.find("0.1,0.25,0.5,1") != std::string::npos);
  CHECK(cli("--version").code == 0);
  CHECK(cli("bogus").code != 0);
  CHECK(cli("train").code != 0);
}

TEST_CASE("filter") {
  ScratchDir dir;
  write_file(dir / "empty.txt", "");
  CHECK(cli("filter " + p(dir / "empty.txt") + " --out " + p(dir / "e.out")).code == 0);
  CHECK(read_file(dir / "e.out").empty());
  CHECK(cli("filter " + p(dir / "nope.txt") + " --out " + p(dir / "n.out")).code != 0);

  write_file(dir / "raw.txt",
             "ბარში ვიჯექით და ყავა დავლიეთ. ნიჩაბი ბარს ჰგავს!\n"
             "english text only\n"
             "  მინდორში, ბართან ახლოს.  \n"
             "ბარი and mixed latin\n");
  REQUIRE(cli("filter " + p(dir / "raw.txt") + " --out " + p(dir / "f.out")).code == 0);
  const std::vector<fs::path> inputs{dir / "raw.txt"};
  wsd::run_filter_pipeline(inputs, dir / "lib.out");
  CHECK(read_file(dir / "f.out") == read_file(dir / "lib.out"));
  CHECK_FALSE(read_file(dir / "f.out").empty());

  REQUIRE(cli("filter " + p(dir / "raw.txt") + " --raw-lines --out " + p(dir / "r.out")).code == 0);
  wsd::run_filter_pipeline(inputs, dir / "libr.out", true);
  CHECK(read_file(dir / "r.out") == read_file(dir / "libr.out"));

  const auto piped = cli("filter - --out -", read_file(dir / "raw.txt"));
  CHECK(piped.code == 0);
  CHECK(piped.out == read_file(dir / "lib.out"));

  const auto manifest = read_json(dir / "f.out.manifest.json");
  CHECK(manifest.at("subcommand") == "filter");
  CHECK(manifest.contains("timestamp"));
  CHECK(manifest.contains("duration_seconds"));
}

TEST_CASE("extract") {
  const auto& f = fixture();
  ScratchDir dir;
  std::string text;
  for (int i = 0; i < 25; ++i) text += "დღეს ბარში ვიყავით. ";
  text += "\nსხვა წინადადება აქ არის.\nდიდი ბარით ვთხრიდით მიწას.\n";
  write_file(dir / "raw.txt", text);
  REQUIRE(cli("extract " + p(dir / "raw.txt") + " --spec " + p(f.spec) + " --out " +
              p(dir / "w.tsv"))
              .code == 0);
  const auto windows = wsd::load_labeled_dataset(dir / "w.tsv", wsd::load_homonym_spec(f.spec));
  CHECK(windows.size() == 26);
  for (const auto& w : windows) CHECK(w.label.is_other());

  write_file(dir / "none.txt", "მინდორში ვიყავით.\n");
  CHECK(cli("extract " + p(dir / "none.txt") + " --spec " + p(f.spec) + " --out " +
            p(dir / "n.tsv"))
            .code == 0);
  CHECK(wsd::load_labeled_dataset(dir / "n.tsv", wsd::load_homonym_spec(f.spec)).empty());

  write_file(dir / "bad.spec", "lemma ბარი\nsense 3 x y\n");
  CHECK(cli("extract " + p(dir / "raw.txt") + " --spec " + p(dir / "bad.spec") + " --out " +
            p(dir / "b.tsv"))
            .code != 0);
}

TEST_CASE("train-embeddings") {
  const auto& f = fixture();
  ScratchDir dir;
  REQUIRE(cli("train-embeddings " + p(f.corpus) + " --out " + p(dir / "a.bin") + " " + kEmbArgs)
              .code == 0);
  CHECK(read_file(dir / "a.bin") == read_file(f.emb));
  const auto matrix = wsd::load_embeddings(dir / "a.bin");
  CHECK(matrix.dimension == 16);

  REQUIRE(cli("train-embeddings " + p(f.corpus) + " --out " + p(dir / "z.bin") +
              " --dim 16 --min-count 1 --epochs 0")
              .code == 0);
  CHECK(wsd::load_embeddings(dir / "z.bin").rows() == matrix.rows());

  REQUIRE(cli("train-embeddings " + p(f.corpus) + " --out " + p(dir / "s.bin") + " " + kEmbArgs +
              " --seed 99")
              .code == 0);
  CHECK(read_file(dir / "s.bin") != read_file(f.emb));

  const auto manifest = read_json(dir / "a.bin.manifest.json");
  CHECK(manifest.at("config").at("dimension") == 16);
  CHECK(manifest.at("seeds").at("seed") == 42);
  CHECK(cli("train-embeddings " + p(dir / "missing.txt") + " --out " + p(dir / "m.bin")).code != 0);
  CHECK(cli("train-embeddings " + p(f.corpus) + " --out " + p(dir / "m.bin") + " --dim 0").code !=
        0);
}

TEST_CASE("train") {
  const auto& f = fixture();
  ScratchDir dir;
  const auto r = cli("train " + p(f.dataset) + " " + f.common() + " --out " + p(dir / "m.bin") +
                     " " + kTrainArgs);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("epoch 1 train_loss") != std::string::npos);
  CHECK(r.out.find("epoch 3 train_loss") != std::string::npos);
  CHECK(r.out.find("best_epoch") != std::string::npos);
  wsd::LstmDims dims;
  dims.input_dim = 16;
  CHECK(r.out.find("parameters " + std::to_string(wsd::parameter_count(dims))) !=
        std::string::npos);
  CHECK(read_file(dir / "m.bin") == read_file(f.model));
  const auto manifest = read_json(dir / "m.bin.manifest.json");
  CHECK(manifest.at("subcommand") == "train");
  CHECK(manifest.at("seeds").contains("split_seed"));

  CHECK(cli("train " + p(f.dataset) + " --embeddings " + p(dir / "none.bin") + " --spec " +
            p(f.spec) + " --out " + p(dir / "x.bin"))
            .code != 0);
  CHECK_FALSE(fs::exists(dir / "x.bin"));
  CHECK(cli("train " + p(f.dataset) + " " + f.common() + " --out " + p(dir / "y.bin") +
            " --optimizer rmsprop")
            .code != 0);
}

TEST_CASE("evaluate") {
  const auto& f = fixture();
  ScratchDir dir;
  const auto one = cli("evaluate " + p(f.dataset) + " " + f.common() + " --model " + p(f.model) +
                       " --out " + p(dir / "m.json"));
  REQUIRE(one.code == 0);
  CHECK(one.out.find("accuracy ") == 0);
  const auto doc = wsd::read_metrics(dir / "m.json");
  CHECK(doc.kind() == "metrics");
  CHECK(doc.model == "lstm");
  CHECK(cli("evaluate " + p(f.dataset) + " " + f.common() + " --out " + p(dir / "n.json")).code !=
        0);

  const auto rep = cli("evaluate " + p(f.dataset) + " " + f.common() + " --runs 3 " + kTrainArgs +
                       " --name bilstm --out " + p(dir / "r.json"));
  REQUIRE(rep.code == 0);
  const auto rdoc = wsd::read_metrics(dir / "r.json");
  CHECK(rdoc.kind() == "repetition");
  CHECK(rdoc.model == "bilstm");
  const auto& s = std::get<wsd::RepetitionSummary>(rdoc.payload);
  CHECK(s.runs == 3);
  CHECK(s.min_accuracy <= s.mean_accuracy);
  CHECK(s.mean_accuracy <= s.max_accuracy);
  CHECK(read_json(dir / "r.json.manifest.json").at("seeds").at("base_seed") == 42);
}

TEST_CASE("ablate") {
  const auto& f = fixture();
  ScratchDir dir;
  REQUIRE(cli("ablate " + p(f.dataset) + " " + f.common() + " --fractions 1.0 --epochs 2 --out " +
              p(dir / "a.json"))
              .code == 0);
  const auto doc = wsd::read_metrics(dir / "a.json");
  const auto& curve = std::get<wsd::AblationCurve>(doc.payload);
  REQUIRE(curve.points.size() == 1);
  CHECK(curve.epochs_per_point == 2);

  REQUIRE(cli("ablate " + p(f.dataset) + " " + f.common() +
              " --fractions 0.25,1.0 --epochs 2 --out " + p(dir / "b.json"))
              .code == 0);
  const auto& two = std::get<wsd::AblationCurve>(wsd::read_metrics(dir / "b.json").payload);
  REQUIRE(two.points.size() == 2);
  CHECK(two.points[0].test_fingerprint == two.points[1].test_fingerprint);
  CHECK(two.points[1].accuracy == curve.points[0].accuracy);
  CHECK(two.points[1].train_size == curve.points[0].train_size);

  CHECK(cli("ablate " + p(f.dataset) + " " + f.common() + " --fractions 0.5,0.5 --out " +
            p(dir / "d.json"))
            .code != 0);
  CHECK(cli("ablate " + p(f.dataset) + " " + f.common() + " --fractions 0,1 --out " +
            p(dir / "z.json"))
            .code != 0);
  CHECK_FALSE(fs::exists(dir / "d.json"));
}

TEST_CASE("predict") {
  const auto& f = fixture();
  const std::string args = "--model " + p(f.model) + " " + f.common();
  const std::string sentence = "ჩვენ გუშინ ბარში ვიჯექით.";
  const auto r = cli("predict " + quote(sentence) + " " + args);
  REQUIRE(r.code == 0);

  const auto model = wsd::load_model(f.model);
  const auto matrix = wsd::load_embeddings(f.emb);
  const auto spec = wsd::load_homonym_spec(f.spec);
  const auto windows = wsd::extract_windows(wsd::segment_and_tokenize(sentence).front(), spec, "x");
  REQUIRE(windows.size() == 1);
  const auto expected = wsd::predict(model, windows.front(), matrix);

  std::istringstream line(r.out);
  int label = -1;
  std::string gloss;
  double sum = 0.0, pk = 0.0;
  line >> label >> gloss;
  for (int k = 0; k < 3; ++k) {
    line >> pk;
    sum += pk;
    CHECK(pk == doctest::Approx(expected.probs[static_cast<std::size_t>(k)]).epsilon(1e-5));
  }
  CHECK(label == expected.label);
  CHECK(gloss == spec.senses[static_cast<std::size_t>(label)].gloss);
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-4));

  const auto batch = cli("predict " + args, sentence + "\n\nდიდი ბარით ვთხრიდით.\n");
  CHECK(batch.code == 0);
  CHECK(std::count(batch.out.begin(), batch.out.end(), '\n') == 2);
  CHECK(batch.out.substr(0, r.out.size()) == r.out);

  CHECK(cli("predict " + quote("ნიჩაბი მაქვს.") + " " + args).code != 0);
  CHECK(cli("predict " + args, "").code != 0);
}

TEST_CASE("reruns produce identical artefacts") {
  const auto& f = fixture();
  ScratchDir a, b;
  for (const auto* dir : {&a, &b}) {
    REQUIRE(cli("extract " + p(f.corpus) + " --spec " + p(f.spec) + " --out " + p(*dir / "w.tsv"))
                .code == 0);
    REQUIRE(cli("train-embeddings " + p(f.corpus) + " --out " + p(*dir / "e.bin") + " " + kEmbArgs)
                .code == 0);
    REQUIRE(cli("train " + p(f.dataset) + " --embeddings " + p(*dir / "e.bin") + " --spec " +
                p(f.spec) + " --out " + p(*dir / "m.bin") + " " + kTrainArgs)
                .code == 0);
    REQUIRE(cli("evaluate " + p(f.dataset) + " --embeddings " + p(*dir / "e.bin") + " --spec " +
                p(f.spec) + " --model " + p(*dir / "m.bin") + " --out " + p(*dir / "m.json"))
                .code == 0);
  }
  for (const char* name : {"w.tsv", "e.bin", "m.bin", "m.json"})
    CHECK_MESSAGE(read_file(a / name) == read_file(b / name), name);
  CHECK_FALSE(read_file(a / "w.tsv").empty());
}
