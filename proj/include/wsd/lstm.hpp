#pragma once

// Two-layer LSTM sequence classifier with a softmax head, forward pass and
// backpropagation through time. Templated on the scalar type: float is the
// production precision, double is used by gradient checks.

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "wsd/corpus.hpp"
#include "wsd/embeddings.hpp"

namespace wsd {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

struct LstmDims {
  int input_dim = 128;
  int hidden = 64;
  int classes = 3;
  int sequence_length = 13;

  void validate() const;
  friend bool operator==(const LstmDims&, const LstmDims&) = default;
};

/// Gate order used for parameter blocks and serialisation.
enum class Gate : int { kInput = 0, kForget = 1, kCell = 2, kOutput = 3 };
inline constexpr int kGateCount = 4;

/// Weights of one LSTM layer. The four gates are stored side by side: columns
/// [g*H, (g+1)*H) of wx/wh and b belong to gate g.
template <typename T>
struct LstmLayerParams {
  RowMatrix<T> wx;  // D_in x 4H
  RowMatrix<T> wh;  // H x 4H
  RowVector<T> b;   // 4H

  static LstmLayerParams zeros(int input_dim, int hidden);
  int input_dim() const { return static_cast<int>(wx.rows()); }
  int hidden() const { return static_cast<int>(wh.rows()); }

  auto wx_gate(Gate g) { return wx.middleCols(static_cast<int>(g) * hidden(), hidden()); }
  auto wx_gate(Gate g) const { return wx.middleCols(static_cast<int>(g) * hidden(), hidden()); }
  auto wh_gate(Gate g) { return wh.middleCols(static_cast<int>(g) * hidden(), hidden()); }
  auto wh_gate(Gate g) const { return wh.middleCols(static_cast<int>(g) * hidden(), hidden()); }
  auto b_gate(Gate g) { return b.segment(static_cast<int>(g) * hidden(), hidden()); }
  auto b_gate(Gate g) const { return b.segment(static_cast<int>(g) * hidden(), hidden()); }
};

template <typename T>
struct LstmModelT {
  LstmDims dims;
  LstmLayerParams<T> layer1;  // D_in -> H
  LstmLayerParams<T> layer2;  // H -> H
  RowMatrix<T> out_w;         // H x C
  RowVector<T> out_b;         // C

  static LstmModelT zeros(const LstmDims& dims);

  std::size_t parameter_count() const;
  bool all_finite() const;

  /// Visits every parameter tensor as a flat contiguous array.
  template <typename F>
  void for_each_tensor(F&& f) {
    for (auto* layer : {&layer1, &layer2}) {
      f(layer->wx.data(), static_cast<std::size_t>(layer->wx.size()));
      f(layer->wh.data(), static_cast<std::size_t>(layer->wh.size()));
      f(layer->b.data(), static_cast<std::size_t>(layer->b.size()));
    }
    f(out_w.data(), static_cast<std::size_t>(out_w.size()));
    f(out_b.data(), static_cast<std::size_t>(out_b.size()));
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    for (const auto* layer : {&layer1, &layer2}) {
      f(layer->wx.data(), static_cast<std::size_t>(layer->wx.size()));
      f(layer->wh.data(), static_cast<std::size_t>(layer->wh.size()));
      f(layer->b.data(), static_cast<std::size_t>(layer->b.size()));
    }
    f(out_w.data(), static_cast<std::size_t>(out_w.size()));
    f(out_b.data(), static_cast<std::size_t>(out_b.size()));
  }

  template <typename U>
  LstmModelT<U> cast() const {
    LstmModelT<U> m;
    m.dims = dims;
    auto cast_layer = [](const LstmLayerParams<T>& p) {
      return LstmLayerParams<U>{p.wx.template cast<U>(), p.wh.template cast<U>(),
                                p.b.template cast<U>()};
    };
    m.layer1 = cast_layer(layer1);
    m.layer2 = cast_layer(layer2);
    m.out_w = out_w.template cast<U>();
    m.out_b = out_b.template cast<U>();
    return m;
  }

  friend bool operator==(const LstmModelT& a, const LstmModelT& b) {
    auto same = [](const auto& x, const auto& y) {
      return x.rows() == y.rows() && x.cols() == y.cols() && x == y;
    };
    auto same_layer = [&](const LstmLayerParams<T>& x, const LstmLayerParams<T>& y) {
      return same(x.wx, y.wx) && same(x.wh, y.wh) && same(x.b, y.b);
    };
    return a.dims == b.dims && same_layer(a.layer1, b.layer1) && same_layer(a.layer2, b.layer2) &&
           same(a.out_w, b.out_w) && same(a.out_b, b.out_b);
  }
};

using LstmModel = LstmModelT<float>;

/// 4*(D*H + H*H + H) + 4*(H*H + H*H + H) + (H*C + C).
std::size_t parameter_count(const LstmDims& dims);

// ---------------------------------------------------------------------------
// Single cell step. Every matrix has one row per batch element.

template <typename T>
struct CellOutput {
  RowMatrix<T> h;
  RowMatrix<T> c;
  // Intermediates kept for backpropagation.
  RowMatrix<T> input_gate, forget_gate, cell_candidate, output_gate, tanh_c;
};

template <typename T>
CellOutput<T> lstm_cell_forward(const RowMatrix<T>& x, const RowMatrix<T>& h_prev,
                                const RowMatrix<T>& c_prev, const LstmLayerParams<T>& params);

// ---------------------------------------------------------------------------
// Sequence forward/backward.

/// Activations of one layer over a stacked batch. Row t*B + b holds time
/// step t of batch element b.
template <typename T>
struct LayerCache {
  RowMatrix<T> x;      // TB x D_in
  RowMatrix<T> gates;  // TB x 4H, activated i, f, g, o
  RowMatrix<T> c;      // TB x H
  RowMatrix<T> tanh_c; // TB x H
  RowMatrix<T> h;      // TB x H
};

template <typename T>
struct ForwardCache {
  int batch = 0;
  int steps = 0;
  LayerCache<T> layer1;
  LayerCache<T> layer2;
  RowMatrix<T> logits;  // B x C
  RowMatrix<T> probs;   // B x C
};

/// Stacks per-example T x D inputs (rows are time steps) into the TB x D
/// time-major layout used by the batched kernels.
template <typename T>
RowMatrix<T> stack_sequences(std::span<const RowMatrix<T>> inputs,
                             std::span<const std::size_t> indices);

/// Batched forward pass over a stacked TB x D input. Throws NumericError on
/// non-finite input.
template <typename T>
ForwardCache<T> forward_stacked(const LstmModelT<T>& model, const RowMatrix<T>& stacked,
                                int batch);

template <typename T>
struct ForwardResult {
  RowVector<T> probs;
  ForwardCache<T> cache;
};

/// Single sequence: `input` is sequence_length x input_dim.
template <typename T>
ForwardResult<T> forward(const LstmModelT<T>& model, const RowMatrix<T>& input);

template <typename T>
struct LossAndGradients {
  double loss = 0.0;
  double grad_norm = 0.0;  // before clipping
  bool clipped = false;
  LstmModelT<T> grads;
};

/// Mean cross-entropy and its gradient for every parameter. The global L2
/// norm of the gradient is clipped to `clip_norm` when clip_norm > 0.
/// Throws NumericError when the loss is not finite.
template <typename T>
LossAndGradients<T> loss_and_gradients_stacked(const LstmModelT<T>& model,
                                               const RowMatrix<T>& stacked,
                                               std::span<const int> labels, double clip_norm);

template <typename T>
LossAndGradients<T> loss_and_gradients(const LstmModelT<T>& model,
                                       std::span<const RowMatrix<T>> inputs,
                                       std::span<const int> labels, double clip_norm);

/// Mean cross-entropy of a batch without gradients.
template <typename T>
double batch_loss(const LstmModelT<T>& model, const RowMatrix<T>& stacked,
                  std::span<const int> labels);

// ---------------------------------------------------------------------------
// Embedding and inference

/// sequence_length x D rows; OOV tokens give zero rows and short windows are
/// left-padded with zeros so the last token sits on the last step. Windows
/// longer than sequence_length keep their trailing tokens.
RowMatrix<float> embed_window(const SentenceWindow& window, const EmbeddingMatrix& matrix,
                              int sequence_length = static_cast<int>(kWindowLength));

struct Prediction {
  int label = 0;
  std::vector<float> probs;
};

/// Argmax with ties broken toward the lowest class index.
int argmax_lowest(std::span<const float> probs);

Prediction predict(const LstmModel& model, const SentenceWindow& window,
                   const EmbeddingMatrix& matrix);
Prediction predict_embedded(const LstmModel& model, const RowMatrix<float>& input);

// ---------------------------------------------------------------------------
// Serialisation: "WSDM", u32 version, u32 D_in, H, C, T, then float32 tensors
// in order layer1 (gate i,f,g,o: W_x, W_h, b), layer2 (same), softmax W, b.
// Matrices are row-major.

inline constexpr std::uint32_t kModelFormatVersion = 1;
inline constexpr std::size_t kModelHeaderBytes = 24;

void save_model(const LstmModel& model, std::ostream& out);
void save_model(const LstmModel& model, const std::filesystem::path& path);
LstmModel load_model(std::istream& in);
LstmModel load_model(const std::filesystem::path& path);

}  // namespace wsd
