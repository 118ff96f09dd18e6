#include <cmath>
#include <cstring>
#include <sstream>

#include "doctest.h"
#include "oracle.hpp"
#include "wsd/error.hpp"
#include "wsd/lstm.hpp"
#include "wsd/random.hpp"

using namespace wsd;
using namespace wsd::testing;

namespace {

std::size_t counted_parameters(const LstmDims& dims) {
  std::size_t n = 0;
  LstmModelT<float>::zeros(dims).for_each_tensor([&](const float*, std::size_t k) { n += k; });
  return n;
}

std::string serialize(const LstmModel& m) {
  std::ostringstream out;
  save_model(m, out);
  return out.str();
}

LstmModel random_float_model(const LstmDims& dims, std::uint64_t seed) {
  return random_model(dims, seed, 0.3).cast<float>();
}

}  // namespace

TEST_CASE("parameter count of the default classifier") {
  const LstmDims dims;
  const std::size_t d = 128, h = 64, c = 3;
  const std::size_t by_hand = 4 * (d * h + h * h + h) + 4 * (h * h + h * h + h) + (h * c + c);
  CHECK(by_hand == 82627);
  CHECK(parameter_count(dims) == 82627);
  CHECK(counted_parameters(dims) == 82627);
  CHECK(LstmModel::zeros(dims).parameter_count() == 82627);
  // Float32 payload: 330,508 bytes = 322.76 KiB.
  CHECK(parameter_count(dims) * sizeof(float) == 330508);
  CHECK(std::round(330508.0 / 1024.0 * 100.0) / 100.0 == doctest::Approx(322.76));
}

TEST_CASE("parameter count scales with its dimensions") {
  CHECK(parameter_count(LstmDims{1, 1, 1, 1}) == 26);
  CHECK(counted_parameters(LstmDims{1, 1, 1, 1}) == 26);
  // One more class adds a softmax column and its bias.
  CHECK(parameter_count(LstmDims{128, 64, 4, 13}) - parameter_count(LstmDims{}) == 65);
  for (int d : {1, 3, 7})
    for (int h : {1, 2, 5})
      for (int c : {2, 3})
        CHECK(parameter_count(LstmDims{d, h, c, 4}) == counted_parameters(LstmDims{d, h, c, 4}));
}

TEST_CASE("dimension validation") {
  CHECK_THROWS_AS(LstmDims({0, 64, 3, 13}).validate(), InvalidArgument);
  CHECK_THROWS_AS(LstmDims({128, 64, 0, 13}).validate(), InvalidArgument);
  CHECK_THROWS_AS(LstmDims({128, -1, 3, 13}).validate(), InvalidArgument);
  CHECK_THROWS_AS(LstmDims({128, 64, 3, 0}).validate(), InvalidArgument);
  CHECK_NOTHROW(LstmDims{}.validate());
}

TEST_CASE("cell with zero parameters halves the carried state") {
  const auto p = LstmLayerParams<double>::zeros(3, 2);
  RowMatrix<double> x = RowMatrix<double>::Ones(1, 3);
  RowMatrix<double> h(1, 2), c(1, 2);
  h << 0.3, -0.2;
  c << 0.8, -1.4;
  const auto out = lstm_cell_forward(x, h, c, p);
  // All gates are s(0) = 0.5 and the candidate is tanh(0) = 0.
  CHECK(out.c(0, 0) == doctest::Approx(0.4));
  CHECK(out.c(0, 1) == doctest::Approx(-0.7));
  CHECK(out.h(0, 0) == doctest::Approx(0.5 * std::tanh(0.4)));
  CHECK(out.h(0, 1) == doctest::Approx(0.5 * std::tanh(-0.7)));
}

TEST_CASE("hand-computed two-unit cell") {
  // D = 1, H = 2. Weights chosen per gate so each pre-activation is simple.
  auto p = LstmLayerParams<double>::zeros(1, 2);
  p.wx_gate(Gate::kInput) << 1.0, -1.0;
  p.wx_gate(Gate::kForget) << 0.5, 0.0;
  p.wx_gate(Gate::kCell) << 2.0, 1.0;
  p.wx_gate(Gate::kOutput) << 0.0, 1.0;
  p.wh_gate(Gate::kInput) << 0.0, 0.0, 1.0, 0.0;  // row 1 feeds h_prev[1]
  p.b_gate(Gate::kForget) << 1.0, 1.0;
  RowMatrix<double> x(1, 1), h(1, 2), c(1, 2);
  x << 0.5;
  h << 0.0, 2.0;
  c << 1.0, -1.0;
  auto s = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };

  // unit 0: z_i = 0.5 + 2.0, z_f = 0.25 + 1, z_g = 1.0, z_o = 0
  const double c0 = s(1.25) * 1.0 + s(2.5) * std::tanh(1.0);
  const double h0 = s(0.0) * std::tanh(c0);
  // unit 1: z_i = -0.5, z_f = 1, z_g = 0.5, z_o = 0.5
  const double c1 = s(1.0) * -1.0 + s(-0.5) * std::tanh(0.5);
  const double h1 = s(0.5) * std::tanh(c1);

  const auto out = lstm_cell_forward(x, h, c, p);
  CHECK(out.c(0, 0) == doctest::Approx(c0).epsilon(1e-12));
  CHECK(out.c(0, 1) == doctest::Approx(c1).epsilon(1e-12));
  CHECK(out.h(0, 0) == doctest::Approx(h0).epsilon(1e-12));
  CHECK(out.h(0, 1) == doctest::Approx(h1).epsilon(1e-12));
  CHECK(out.input_gate(0, 0) == doctest::Approx(s(2.5)));
  CHECK(out.forget_gate(0, 1) == doctest::Approx(s(1.0)));
}

TEST_CASE("activations stay in their ranges for extreme inputs") {
  const LstmDims dims{4, 3, 3, 5};
  const auto m = random_model(dims, 3, 50.0);
  Rng rng(5);
  RowMatrix<double> x(1, 4), h(1, 3), c(1, 3);
  for (int trial = 0; trial < 50; ++trial) {
    for (int k = 0; k < 4; ++k) x(0, k) = rng.uniform(-100, 100);
    for (int k = 0; k < 3; ++k) {
      h(0, k) = rng.uniform(-1, 1);
      c(0, k) = rng.uniform(-5, 5);
    }
    const auto out = lstm_cell_forward(x, h, c, m.layer1);
    for (int k = 0; k < 3; ++k) {
      CHECK(out.input_gate(0, k) >= 0.0);
      CHECK(out.input_gate(0, k) <= 1.0);
      CHECK(out.forget_gate(0, k) >= 0.0);
      CHECK(out.forget_gate(0, k) <= 1.0);
      CHECK(std::abs(out.cell_candidate(0, k)) <= 1.0);
      CHECK(std::abs(out.h(0, k)) <= 1.0);
      CHECK(std::isfinite(out.c(0, k)));
    }
  }
}

TEST_CASE("forward matches the scalar reference") {
  SUBCASE("double precision, small shapes") {
    const LstmDims dims{4, 3, 3, 3};
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const auto m = random_model(dims, seed, 0.8);
      const auto seq = random_sequence(dims, seed + 100);
      const auto expected = reference_probs(dims, flatten(m), seq);
      const auto got = forward(m, to_matrix(seq)).probs;
      for (int k = 0; k < 3; ++k) CHECK(got(k) == doctest::Approx(expected[k]).epsilon(1e-12));
    }
  }
  SUBCASE("float model at production size") {
    const LstmDims dims;
    const auto md = random_model(dims, 9, 0.1);
    const auto mf = md.cast<float>();
    const auto seq = random_sequence(dims, 10);
    const auto expected = reference_probs(dims, flatten(md), seq);
    const auto got = forward(mf, to_matrix(seq).cast<float>().eval()).probs;
    double sum = 0.0;
    for (int k = 0; k < 3; ++k) {
      CHECK(std::abs(got(k) - expected[k]) < 1e-5);
      sum += got(k);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("batched forward equals per-sequence forward") {
  const LstmDims dims{5, 4, 3, 6};
  const auto m = random_model(dims, 21, 0.5);
  std::vector<RowMatrix<double>> seqs;
  for (std::uint64_t i = 0; i < 7; ++i) seqs.push_back(to_matrix(random_sequence(dims, 40 + i)));
  const std::vector<std::size_t> idx{3, 0, 6, 1};
  const auto stacked = stack_sequences<double>(seqs, idx);
  const auto cache = forward_stacked(m, stacked, 4);
  for (int b = 0; b < 4; ++b) {
    const auto single = forward(m, seqs[idx[static_cast<std::size_t>(b)]]).probs;
    for (int k = 0; k < 3; ++k) CHECK(cache.probs(b, k) == doctest::Approx(single(k)).epsilon(1e-12));
  }
}

TEST_CASE("zero model predicts uniformly with loss ln 3") {
  const LstmDims dims{4, 3, 3, 3};
  const auto m = LstmModelT<double>::zeros(dims);
  std::vector<RowMatrix<double>> xs{to_matrix(random_sequence(dims, 1)),
                                    to_matrix(random_sequence(dims, 2))};
  const std::vector<int> labels{0, 2};
  const auto lg = loss_and_gradients<double>(m, xs, labels, 0.0);
  CHECK(lg.loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  const auto probs = forward(m, xs[0]).probs;
  for (int k = 0; k < 3; ++k) CHECK(probs(k) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("BPTT gradients match central differences on random instances") {
  const LstmDims dims{4, 3, 3, 3};
  double worst = 0.0;
  for (std::uint64_t inst = 0; inst < 20; ++inst) {
    const auto m = random_model(dims, 1000 + inst, 0.7);
    std::vector<Sequence> seqs{random_sequence(dims, 2000 + inst), random_sequence(dims, 3000 + inst)};
    const std::vector<int> labels{static_cast<int>(inst % 3), static_cast<int>((inst + 1) % 3)};
    std::vector<RowMatrix<double>> xs{to_matrix(seqs[0]), to_matrix(seqs[1])};

    const auto analytic = flatten(loss_and_gradients<double>(m, xs, labels, 0.0).grads);
    const auto numeric = central_differences(
        [&](std::span<const double> p) { return reference_loss(dims, p, seqs, labels); },
        flatten(m), 1e-5);
    REQUIRE(analytic.size() == numeric.size());
    for (std::size_t i = 0; i < analytic.size(); ++i)
      worst = std::max(worst, relative_error(analytic[i], numeric[i], 1e-6));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("loss of a duplicated batch equals the original") {
  const LstmDims dims{4, 3, 3, 3};
  const auto m = random_model(dims, 77, 0.6);
  std::vector<RowMatrix<double>> xs{to_matrix(random_sequence(dims, 1)),
                                    to_matrix(random_sequence(dims, 2))};
  std::vector<RowMatrix<double>> twice{xs[0], xs[1], xs[0], xs[1]};
  const std::vector<int> labels{1, 2};
  const std::vector<int> labels2{1, 2, 1, 2};
  const auto a = loss_and_gradients<double>(m, xs, labels, 0.0);
  const auto b = loss_and_gradients<double>(m, twice, labels2, 0.0);
  CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-12));
  const auto ga = flatten(a.grads);
  const auto gb = flatten(b.grads);
  for (std::size_t i = 0; i < ga.size(); ++i) CHECK(ga[i] == doctest::Approx(gb[i]).epsilon(1e-10));
}

TEST_CASE("gradient clipping rescales to the global norm") {
  const LstmDims dims{4, 3, 3, 3};
  const auto m = random_model(dims, 5, 3.0);
  std::vector<RowMatrix<double>> xs{to_matrix(random_sequence(dims, 8))};
  const std::vector<int> labels{0};
  const auto raw = loss_and_gradients<double>(m, xs, labels, 0.0);
  const auto g = flatten(raw.grads);
  double norm = 0.0;
  for (double v : g) norm += v * v;
  norm = std::sqrt(norm);
  CHECK(raw.grad_norm == doctest::Approx(norm));
  CHECK_FALSE(raw.clipped);

  const double clip = norm / 4.0;
  const auto clipped = loss_and_gradients<double>(m, xs, labels, clip);
  CHECK(clipped.clipped);
  CHECK(clipped.loss == raw.loss);
  const auto gc = flatten(clipped.grads);
  double cn = 0.0;
  for (std::size_t i = 0; i < gc.size(); ++i) {
    cn += gc[i] * gc[i];
    CHECK(gc[i] == doctest::Approx(g[i] * clip / norm).epsilon(1e-10));
  }
  CHECK(std::sqrt(cn) == doctest::Approx(clip));

  const auto loose = loss_and_gradients<double>(m, xs, labels, norm * 2.0);
  CHECK_FALSE(loose.clipped);
  CHECK(flatten(loose.grads) == g);
}

TEST_CASE("non-finite input is rejected") {
  const LstmDims dims{2, 2, 3, 2};
  const auto m = random_model(dims, 1, 0.5).cast<float>();
  RowMatrix<float> x = RowMatrix<float>::Zero(2, 2);
  x(1, 0) = std::nanf("");
  CHECK_THROWS_AS(predict_embedded(m, x), NumericError);
}

TEST_CASE("window embedding pads on the left and zeroes unknown words") {
  EmbeddingMatrix emb;
  emb.vocab = Vocabulary::from_ordered({{"ა", 5}, {"ბ", 4}});
  emb.dimension = 2;
  emb.input_vectors = {1, 2, 3, 4};
  SentenceWindow w{{"ა", "უცნობი", "ბ"}, 1, ""};
  const auto x = embed_window(w, emb, 5);
  REQUIRE(x.rows() == 5);
  REQUIRE(x.cols() == 2);
  for (int r : {0, 1, 3})
    for (int k = 0; k < 2; ++k) CHECK(x(r, k) == 0.0f);
  CHECK(x(2, 0) == 1.0f);
  CHECK(x(2, 1) == 2.0f);
  CHECK(x(4, 0) == 3.0f);
  CHECK(x(4, 1) == 4.0f);

  SentenceWindow longer{{"ბ", "ა", "ა", "ბ"}, 0, ""};
  const auto y = embed_window(longer, emb, 3);
  CHECK(y(0, 0) == 1.0f);
  CHECK(y(2, 0) == 3.0f);
}

TEST_CASE("argmax breaks ties toward the lowest class") {
  CHECK(argmax_lowest(std::vector<float>{0.2f, 0.4f, 0.4f}) == 1);
  CHECK(argmax_lowest(std::vector<float>{0.5f, 0.5f}) == 0);
  CHECK(argmax_lowest(std::vector<float>{0.1f, 0.2f, 0.7f}) == 2);
}

TEST_CASE("model files round-trip byte for byte") {
  const LstmDims dims;
  const auto m = random_float_model(dims, 12);
  const auto bytes = serialize(m);
  CHECK(bytes.size() == kModelHeaderBytes + 330508);
  CHECK(bytes.substr(0, 4) == "WSDM");

  std::istringstream in(bytes);
  const auto back = load_model(in);
  CHECK(back == m);
  CHECK(serialize(back) == bytes);
}

TEST_CASE("tensor order in the model file") {
  // Every parameter holds its own in-memory index; the file lists each layer
  // gate by gate (W_x, W_h, b), then the softmax weights and bias.
  const LstmDims dims{2, 3, 2, 3};
  auto m = LstmModel::zeros(dims);
  float next = 0.0f;
  m.for_each_tensor([&](float* d, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) d[i] = next++;
  });
  std::vector<float> expected;
  auto push = [&](const auto& block) {
    for (Eigen::Index r = 0; r < block.rows(); ++r)
      for (Eigen::Index c = 0; c < block.cols(); ++c) expected.push_back(block(r, c));
  };
  for (const auto* layer : {&m.layer1, &m.layer2})
    for (Gate g : {Gate::kInput, Gate::kForget, Gate::kCell, Gate::kOutput}) {
      push(layer->wx_gate(g));
      push(layer->wh_gate(g));
      push(layer->b_gate(g));
    }
  push(m.out_w);
  push(m.out_b);

  const auto bytes = serialize(m);
  REQUIRE(expected.size() == parameter_count(dims));
  REQUIRE(bytes.size() == kModelHeaderBytes + expected.size() * 4);
  std::vector<float> stored(expected.size());
  std::memcpy(stored.data(), bytes.data() + kModelHeaderBytes, stored.size() * 4);
  CHECK(stored == expected);

  std::uint32_t header[6];
  std::memcpy(header, bytes.data(), sizeof header);
  CHECK(header[1] == kModelFormatVersion);
  CHECK(header[2] == 2);
  CHECK(header[3] == 3);
  CHECK(header[4] == 2);
  CHECK(header[5] == 3);
}

TEST_CASE("corrupt model files are rejected") {
  const auto m = random_float_model(LstmDims{3, 2, 3, 4}, 4);
  const auto bytes = serialize(m);
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{23}, bytes.size() - 1}) {
    std::istringstream in(bytes.substr(0, cut));
    CHECK_THROWS_AS(load_model(in), FormatError);
  }
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  std::istringstream in1(bad_magic);
  CHECK_THROWS_AS(load_model(in1), FormatError);

  auto bad_version = bytes;
  bad_version[4] = 9;
  std::istringstream in2(bad_version);
  CHECK_THROWS_AS(load_model(in2), FormatError);

  std::istringstream in3(bytes + "x");
  CHECK_THROWS_AS(load_model(in3), FormatError);
}
