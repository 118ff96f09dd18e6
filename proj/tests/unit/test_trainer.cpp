#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "oracle.hpp"
#include "synthetic.hpp"
#include "wsd/error.hpp"
#include "wsd/random.hpp"
#include "wsd/trainer.hpp"

using namespace wsd;
using namespace wsd::testing;

namespace {

// Class c puts a spike on input feature c at every step, plus noise.
EncodedExamples separable(std::size_t n, const LstmDims& dims, double noise, std::uint64_t seed) {
  Rng rng(seed);
  EncodedExamples out;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % static_cast<std::size_t>(dims.classes));
    RowMatrix<float> x(dims.sequence_length, dims.input_dim);
    for (int t = 0; t < dims.sequence_length; ++t)
      for (int k = 0; k < dims.input_dim; ++k)
        x(t, k) = static_cast<float>((k == label ? 1.0 : 0.0) + rng.uniform(-noise, noise));
    out.inputs.push_back(std::move(x));
    out.labels.push_back(label);
  }
  return out;
}

// Inputs independent of labels: nothing to learn, so validation loss rises.
EncodedExamples noise_only(std::size_t n, const LstmDims& dims, std::uint64_t seed) {
  auto out = separable(n, dims, 1.0, seed);
  Rng rng(seed + 1);
  for (auto& l : out.labels) l = static_cast<int>(rng.below(static_cast<std::uint64_t>(dims.classes)));
  for (auto& x : out.inputs)
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(rng.uniform(-1, 1));
  return out;
}

std::string bytes(const LstmModel& m) {
  std::ostringstream out;
  save_model(m, out);
  return out.str();
}

std::vector<float> flat(const LstmModel& m) {
  std::vector<float> out;
  m.for_each_tensor([&](const float* d, std::size_t n) { out.insert(out.end(), d, d + n); });
  return out;
}

}  // namespace

TEST_CASE("initialisation follows Glorot bounds and unit forget bias") {
  const LstmDims dims;
  const auto m = initialize_model(dims, 42);
  const double lx1 = std::sqrt(6.0 / (128 + 64));
  const double lh = std::sqrt(6.0 / (64 + 64));
  const double lo = std::sqrt(6.0 / (64 + 3));
  CHECK(m.layer1.wx.cwiseAbs().maxCoeff() <= lx1);
  CHECK(m.layer1.wx.cwiseAbs().maxCoeff() > 0.9 * lx1);
  CHECK(m.layer1.wh.cwiseAbs().maxCoeff() <= lh);
  CHECK(m.layer2.wx.cwiseAbs().maxCoeff() <= lh);
  CHECK(m.out_w.cwiseAbs().maxCoeff() <= lo);
  CHECK(m.out_b.isZero());
  for (const auto* layer : {&m.layer1, &m.layer2}) {
    CHECK(layer->b_gate(Gate::kForget).isOnes());
    CHECK(layer->b_gate(Gate::kInput).isZero());
    CHECK(layer->b_gate(Gate::kCell).isZero());
    CHECK(layer->b_gate(Gate::kOutput).isZero());
  }
  CHECK(initialize_model(dims, 42) == m);
  CHECK_FALSE(initialize_model(dims, 43) == m);
}

TEST_CASE("one full-batch SGD epoch is a single gradient step") {
  const LstmDims dims{3, 4, 3, 4};
  const auto data = separable(12, dims, 0.3, 1);
  ClassifierTrainConfig cfg;
  cfg.optimizer = OptimizerKind::kSgd;
  cfg.learning_rate = 0.5;
  cfg.batch_size = 12;
  cfg.max_epochs = 1;
  cfg.early_stopping = false;
  cfg.gradient_clip_norm = 0.0;
  const auto trained = train_classifier(data, EncodedExamples{}, dims, cfg);

  const auto init = initialize_model(dims, cfg.seed);
  const auto lg = loss_and_gradients<float>(init, data.inputs, data.labels, 0.0);
  const auto p0 = flat(init), g = flat(lg.grads), p1 = flat(trained.model);
  for (std::size_t i = 0; i < p0.size(); ++i)
    CHECK(p1[i] == doctest::Approx(p0[i] - 0.5f * g[i]).epsilon(1e-5));
  CHECK(trained.history.epochs.size() == 1);
  CHECK(trained.history.epochs[0].train_loss == doctest::Approx(lg.loss).epsilon(1e-6));
}

TEST_CASE("the first Adam step moves each weight by about the learning rate") {
  const LstmDims dims{3, 4, 3, 4};
  const auto data = separable(9, dims, 0.3, 2);
  ClassifierTrainConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.batch_size = 9;
  cfg.max_epochs = 1;
  cfg.early_stopping = false;
  cfg.gradient_clip_norm = 0.0;
  const auto trained = train_classifier(data, EncodedExamples{}, dims, cfg);
  const auto init = initialize_model(dims, cfg.seed);
  const auto g = flat(loss_and_gradients<float>(init, data.inputs, data.labels, 0.0).grads);
  const auto p0 = flat(init), p1 = flat(trained.model);
  std::size_t checked = 0;
  for (std::size_t i = 0; i < p0.size(); ++i) {
    if (std::abs(g[i]) < 1e-5f) continue;  // epsilon dominates
    ++checked;
    const float expected = p0[i] - 0.01f * (g[i] > 0 ? 1.0f : -1.0f);
    CHECK(p1[i] == doctest::Approx(expected).epsilon(1e-3));
  }
  CHECK(checked > p0.size() / 2);
}

TEST_CASE("a separable task is learned perfectly") {
  const LstmDims dims{3, 8, 3, 4};
  const auto train = separable(150, dims, 0.4, 3);
  const auto val = separable(60, dims, 0.4, 4);
  ClassifierTrainConfig cfg;
  cfg.max_epochs = 30;
  cfg.learning_rate = 0.01;
  const auto trained = train_classifier(train, val, dims, cfg);
  CHECK(evaluate_loss_accuracy(trained.model, val).accuracy == 1.0);
  CHECK(trained.history.epochs[static_cast<std::size_t>(trained.history.best_epoch - 1)]
            .validation_accuracy == 1.0);
}

TEST_CASE("early stopping invariants hold across seeds") {
  const LstmDims dims{4, 6, 3, 5};
  const auto train = noise_only(60, dims, 10);
  const auto val = noise_only(40, dims, 20);
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    ClassifierTrainConfig cfg;
    cfg.seed = seed;
    cfg.max_epochs = 25;
    cfg.learning_rate = 0.01;
    cfg.early_stopping_patience = 3;
    const auto tr = train_classifier(train, val, dims, cfg);
    const auto& h = tr.history;
    REQUIRE(h.best_epoch >= 1);
    CHECK(h.epochs.size() <= 25);
    for (std::size_t e = 0; e < h.epochs.size(); ++e) CHECK(h.epochs[e].epoch == static_cast<int>(e + 1));

    // best_epoch is the first minimum of validation loss.
    const auto best = std::min_element(h.epochs.begin(), h.epochs.end(), [](auto& a, auto& b) {
      return a.validation_loss < b.validation_loss;
    });
    CHECK(best->epoch == h.best_epoch);
    if (h.stopped_early)
      CHECK(h.epochs.size() == static_cast<std::size_t>(h.best_epoch + 3));
    else
      CHECK(h.epochs.size() == 25);
    // The returned weights are the best epoch's.
    const auto restored = evaluate_loss_accuracy(tr.model, val);
    CHECK(restored.loss == doctest::Approx(best->validation_loss).epsilon(1e-9));
  }
}

TEST_CASE("pure noise triggers early stopping") {
  const LstmDims dims{4, 16, 3, 5};
  ClassifierTrainConfig cfg;
  cfg.max_epochs = 40;
  cfg.learning_rate = 0.02;
  const auto tr = train_classifier(noise_only(80, dims, 30), noise_only(40, dims, 40), dims, cfg);
  CHECK(tr.history.stopped_early);
  CHECK(tr.history.epochs.size() < 40);
}

TEST_CASE("without early stopping every epoch runs and the final weights are kept") {
  const LstmDims dims{4, 6, 3, 5};
  const auto val = noise_only(30, dims, 6);
  ClassifierTrainConfig cfg;
  cfg.max_epochs = 7;
  cfg.early_stopping = false;
  const auto tr = train_classifier(noise_only(40, dims, 5), val, dims, cfg);
  CHECK(tr.history.epochs.size() == 7);
  CHECK_FALSE(tr.history.stopped_early);
  CHECK(evaluate_loss_accuracy(tr.model, val).loss ==
        doctest::Approx(tr.history.epochs.back().validation_loss).epsilon(1e-9));
}

TEST_CASE("training is deterministic for a seed") {
  const LstmDims dims{3, 5, 3, 4};
  const auto train = separable(40, dims, 0.8, 7);
  const auto val = separable(20, dims, 0.8, 8);
  ClassifierTrainConfig cfg;
  cfg.max_epochs = 6;
  const auto a = train_classifier(train, val, dims, cfg);
  const auto b = train_classifier(train, val, dims, cfg);
  CHECK(bytes(a.model) == bytes(b.model));
  CHECK(a.history.best_epoch == b.history.best_epoch);
  cfg.seed = 7;
  CHECK(bytes(train_classifier(train, val, dims, cfg).model) != bytes(a.model));
}

TEST_CASE("epoch callback sees every record") {
  const LstmDims dims{3, 5, 3, 4};
  ClassifierTrainConfig cfg;
  cfg.max_epochs = 4;
  cfg.early_stopping = false;
  std::vector<int> seen;
  const auto tr = train_classifier(separable(20, dims, 0.5, 1), separable(9, dims, 0.5, 2), dims,
                                   cfg, [&](const EpochRecord& r) { seen.push_back(r.epoch); });
  CHECK(seen == std::vector<int>{1, 2, 3, 4});
}

TEST_CASE("configuration errors") {
  const LstmDims dims{3, 5, 3, 4};
  const auto data = separable(10, dims, 0.5, 1);
  ClassifierTrainConfig cfg;
  CHECK_THROWS_AS(train_classifier(data, EncodedExamples{}, dims, cfg), InvalidArgument);
  CHECK_THROWS_AS(train_classifier(EncodedExamples{}, data, dims, cfg), InvalidArgument);
  cfg.early_stopping_patience = 40;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.gradient_clip_norm = -1.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("non-finite inputs are reported with epoch and batch") {
  const LstmDims dims{3, 5, 3, 4};
  auto data = separable(30, dims, 0.5, 1);
  data.inputs[17](2, 1) = std::numeric_limits<float>::infinity();
  ClassifierTrainConfig cfg;
  cfg.early_stopping = false;
  cfg.max_epochs = 2;
  try {
    train_classifier(data, EncodedExamples{}, dims, cfg);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    const std::string what = e.what();
    CHECK(what.find("epoch 1") != std::string::npos);
    CHECK(what.find("batch") != std::string::npos);
  }
}

TEST_CASE("encoding windows") {
  EmbeddingMatrix emb;
  emb.vocab = Vocabulary::from_ordered({{"ბარი", 3}, {"ა", 2}});
  emb.dimension = 2;
  emb.input_vectors = {1, 1, 2, 2};
  std::vector<LabeledExample> ex{{{{"ა", "ბარი"}, 1, ""}, SenseLabel{2}}};
  const auto enc = encode_examples(ex, emb, 13, 3);
  REQUIRE(enc.size() == 1);
  CHECK(enc.labels[0] == 2);
  CHECK(enc.inputs[0].rows() == 13);
  CHECK(enc.inputs[0](11, 0) == 2.0f);
  CHECK(enc.inputs[0](12, 0) == 1.0f);
  ex[0].label = SenseLabel{};
  CHECK_THROWS_AS(encode_examples(ex, emb, 13, 3), InvalidArgument);
  ex[0].label = SenseLabel{3};
  CHECK_THROWS_AS(encode_examples(ex, emb, 13, 3), InvalidArgument);
}

TEST_CASE("batched predictions equal single predictions") {
  const LstmDims dims{3, 5, 3, 4};
  const auto data = separable(37, dims, 1.0, 9);
  const auto m = initialize_model(dims, 5);
  const auto batched = predict_all(m, data, 8);
  REQUIRE(batched.size() == 37);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < 37; ++i) {
    CHECK(batched[i] == predict_embedded(m, data.inputs[i]).label);
    correct += batched[i] == data.labels[i];
  }
  CHECK(evaluate_loss_accuracy(m, data, 5).accuracy == doctest::Approx(correct / 37.0));
}
