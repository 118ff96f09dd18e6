#include "wsd/lstm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "wsd/error.hpp"

namespace wsd {

namespace {

template <typename T>
auto sigmoid(const Eigen::ArrayBase<T>& x) {
  using S = typename T::Scalar;
  return S(1) / (S(1) + (-x).exp());
}

// Applies the gate nonlinearities to a block of pre-activations (in place) and
// writes the new cell state, tanh of it and the hidden output.
template <typename T, typename ZBlock, typename CPrev, typename COut, typename TanhOut,
          typename HOut>
void activate_cell(ZBlock&& z, const CPrev& c_prev, COut&& c, TanhOut&& tanh_c, HOut&& h,
                   int hidden) {
  const int H = hidden;
  z.leftCols(H) = sigmoid(z.leftCols(H).array()).matrix();
  z.middleCols(H, H) = sigmoid(z.middleCols(H, H).array()).matrix();
  z.middleCols(2 * H, H) = z.middleCols(2 * H, H).array().tanh().matrix();
  z.rightCols(H) = sigmoid(z.rightCols(H).array()).matrix();
  c = (z.middleCols(H, H).array() * c_prev.array() +
       z.leftCols(H).array() * z.middleCols(2 * H, H).array())
          .matrix();
  tanh_c = c.array().tanh().matrix();
  h = (z.rightCols(H).array() * tanh_c.array()).matrix();
}

template <typename T>
void require_finite(const RowMatrix<T>& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite values in ") + what);
}

template <typename T>
void layer_forward(const LstmLayerParams<T>& p, const RowMatrix<T>& x, int batch, int steps,
                   LayerCache<T>& cache) {
  const int H = p.hidden();
  const Eigen::Index tb = static_cast<Eigen::Index>(batch) * steps;
  cache.x = x;
  cache.gates.resize(tb, 4 * H);
  cache.gates.noalias() = x * p.wx;
  cache.gates.rowwise() += p.b;
  cache.c.resize(tb, H);
  cache.tanh_c.resize(tb, H);
  cache.h.resize(tb, H);
  const RowMatrix<T> zero_state = RowMatrix<T>::Zero(batch, H);
  for (int t = 0; t < steps; ++t) {
    auto z = cache.gates.middleRows(static_cast<Eigen::Index>(t) * batch, batch);
    if (t > 0) z.noalias() += cache.h.middleRows(static_cast<Eigen::Index>(t - 1) * batch, batch) * p.wh;
    const auto rows = static_cast<Eigen::Index>(t) * batch;
    if (t > 0) {
      const RowMatrix<T> c_prev = cache.c.middleRows(rows - batch, batch);
      activate_cell<T>(z, c_prev, cache.c.middleRows(rows, batch),
                       cache.tanh_c.middleRows(rows, batch), cache.h.middleRows(rows, batch), H);
    } else {
      activate_cell<T>(z, zero_state, cache.c.middleRows(rows, batch),
                       cache.tanh_c.middleRows(rows, batch), cache.h.middleRows(rows, batch), H);
    }
  }
}

// Backpropagates `dh_above` (gradient of the loss w.r.t. every h_t coming from
// the consumer of this layer) through the unrolled layer. Accumulates weight
// gradients into `g` and returns dL/dx when requested.
template <typename T>
RowMatrix<T> layer_backward(const LstmLayerParams<T>& p, const LayerCache<T>& cache, int batch,
                            int steps, const RowMatrix<T>& dh_above, LstmLayerParams<T>& g,
                            bool need_dx) {
  const int H = p.hidden();
  const Eigen::Index tb = static_cast<Eigen::Index>(batch) * steps;
  RowMatrix<T> dz(tb, 4 * H);
  RowMatrix<T> dh_next = RowMatrix<T>::Zero(batch, H);
  RowMatrix<T> dc_next = RowMatrix<T>::Zero(batch, H);
  RowMatrix<T> dh(batch, H);
  RowMatrix<T> dc(batch, H);
  for (int t = steps - 1; t >= 0; --t) {
    const auto rows = static_cast<Eigen::Index>(t) * batch;
    const auto gates = cache.gates.middleRows(rows, batch);
    const auto i = gates.leftCols(H).array();
    const auto f = gates.middleCols(H, H).array();
    const auto gc = gates.middleCols(2 * H, H).array();
    const auto o = gates.rightCols(H).array();
    const auto tanh_c = cache.tanh_c.middleRows(rows, batch).array();

    dh = dh_above.middleRows(rows, batch) + dh_next;
    dc = (dc_next.array() + dh.array() * o * (T(1) - tanh_c.square())).matrix();

    auto dzt = dz.middleRows(rows, batch);
    dzt.leftCols(H) = (dc.array() * gc * i * (T(1) - i)).matrix();
    if (t > 0) {
      const auto c_prev = cache.c.middleRows(rows - batch, batch).array();
      dzt.middleCols(H, H) = (dc.array() * c_prev * f * (T(1) - f)).matrix();
    } else {
      dzt.middleCols(H, H).setZero();
    }
    dzt.middleCols(2 * H, H) = (dc.array() * i * (T(1) - gc.square())).matrix();
    dzt.rightCols(H) = (dh.array() * tanh_c * o * (T(1) - o)).matrix();

    dc_next = (dc.array() * f).matrix();
    dh_next.noalias() = dzt * p.wh.transpose();
  }
  g.wx.noalias() += cache.x.transpose() * dz;
  g.b += dz.colwise().sum();
  if (steps > 1) {
    const Eigen::Index n = tb - batch;
    g.wh.noalias() += cache.h.topRows(n).transpose() * dz.bottomRows(n);
  }
  if (!need_dx) return {};
  return dz * p.wx.transpose();
}

template <typename T>
void softmax_rows(const RowMatrix<T>& logits, RowMatrix<T>& probs) {
  probs.resize(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const T m = logits.row(r).maxCoeff();
    probs.row(r) = (logits.row(r).array() - m).exp().matrix();
    probs.row(r) /= probs.row(r).sum();
  }
}

template <typename T>
double cross_entropy(const RowMatrix<T>& logits, std::span<const int> labels) {
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r).template cast<double>();
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    total += lse - row(labels[static_cast<std::size_t>(r)]);
  }
  return total / static_cast<double>(logits.rows());
}

void check_labels(std::span<const int> labels, int classes, Eigen::Index batch) {
  if (labels.empty()) throw InvalidArgument("empty batch");
  if (static_cast<Eigen::Index>(labels.size()) != batch)
    throw InvalidArgument("label count does not match batch size");
  for (int y : labels)
    if (y < 0 || y >= classes)
      throw InvalidArgument("label " + std::to_string(y) + " outside 0.." +
                            std::to_string(classes - 1));
}

template <typename T>
int infer_batch(const LstmModelT<T>& model, const RowMatrix<T>& stacked) {
  const int steps = model.dims.sequence_length;
  if (stacked.cols() != model.dims.input_dim)
    throw InvalidArgument("input has " + std::to_string(stacked.cols()) + " columns, expected " +
                          std::to_string(model.dims.input_dim));
  if (stacked.rows() == 0 || stacked.rows() % steps != 0)
    throw InvalidArgument("stacked input rows must be a positive multiple of the sequence length");
  return static_cast<int>(stacked.rows() / steps);
}

// Writes one tensor block row by row as float32.
template <typename Block>
void write_block(std::ostream& out, const Block& block) {
  for (Eigen::Index r = 0; r < block.rows(); ++r)
    for (Eigen::Index c = 0; c < block.cols(); ++c) {
      const float v = block(r, c);
      out.write(reinterpret_cast<const char*>(&v), sizeof(float));
    }
}

template <typename Block>
void read_block(std::istream& in, Block&& block) {
  for (Eigen::Index r = 0; r < block.rows(); ++r)
    for (Eigen::Index c = 0; c < block.cols(); ++c) {
      float v;
      if (!in.read(reinterpret_cast<char*>(&v), sizeof(float)))
        throw FormatError("model file truncated in parameter payload");
      block(r, c) = v;
    }
}

constexpr char kModelMagic[4] = {'W', 'S', 'D', 'M'};
constexpr Gate kGates[kGateCount] = {Gate::kInput, Gate::kForget, Gate::kCell, Gate::kOutput};

}  // namespace

// ---------------------------------------------------------------------------
// Parameters

void LstmDims::validate() const {
  if (input_dim < 1 || hidden < 1 || classes < 1 || sequence_length < 1)
    throw InvalidArgument("LSTM dimensions must all be >= 1");
}

std::size_t parameter_count(const LstmDims& d) {
  const std::size_t D = static_cast<std::size_t>(d.input_dim);
  const std::size_t H = static_cast<std::size_t>(d.hidden);
  const std::size_t C = static_cast<std::size_t>(d.classes);
  return 4 * (D * H + H * H + H) + 4 * (H * H + H * H + H) + (H * C + C);
}

template <typename T>
LstmLayerParams<T> LstmLayerParams<T>::zeros(int input_dim, int hidden) {
  return {RowMatrix<T>::Zero(input_dim, 4 * hidden), RowMatrix<T>::Zero(hidden, 4 * hidden),
          RowVector<T>::Zero(4 * hidden)};
}

template <typename T>
LstmModelT<T> LstmModelT<T>::zeros(const LstmDims& dims) {
  dims.validate();
  LstmModelT m;
  m.dims = dims;
  m.layer1 = LstmLayerParams<T>::zeros(dims.input_dim, dims.hidden);
  m.layer2 = LstmLayerParams<T>::zeros(dims.hidden, dims.hidden);
  m.out_w = RowMatrix<T>::Zero(dims.hidden, dims.classes);
  m.out_b = RowVector<T>::Zero(dims.classes);
  return m;
}

template <typename T>
std::size_t LstmModelT<T>::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&](const T*, std::size_t size) { n += size; });
  return n;
}

template <typename T>
bool LstmModelT<T>::all_finite() const {
  bool ok = true;
  for_each_tensor([&](const T* data, std::size_t size) {
    ok = ok && std::all_of(data, data + size, [](T v) { return std::isfinite(v); });
  });
  return ok;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename T>
CellOutput<T> lstm_cell_forward(const RowMatrix<T>& x, const RowMatrix<T>& h_prev,
                                const RowMatrix<T>& c_prev, const LstmLayerParams<T>& params) {
  const int H = params.hidden();
  if (x.cols() != params.input_dim() || h_prev.cols() != H || c_prev.cols() != H ||
      h_prev.rows() != x.rows() || c_prev.rows() != x.rows())
    throw InvalidArgument("lstm_cell_forward: dimension mismatch");
  RowMatrix<T> z = x * params.wx + h_prev * params.wh;
  z.rowwise() += params.b;
  CellOutput<T> out;
  out.c.resize(x.rows(), H);
  out.tanh_c.resize(x.rows(), H);
  out.h.resize(x.rows(), H);
  activate_cell<T>(z, c_prev, out.c, out.tanh_c, out.h, H);
  out.input_gate = z.leftCols(H);
  out.forget_gate = z.middleCols(H, H);
  out.cell_candidate = z.middleCols(2 * H, H);
  out.output_gate = z.rightCols(H);
  return out;
}

template <typename T>
RowMatrix<T> stack_sequences(std::span<const RowMatrix<T>> inputs,
                             std::span<const std::size_t> indices) {
  if (indices.empty()) throw InvalidArgument("stack_sequences: empty batch");
  const auto& first = inputs[indices[0]];
  const Eigen::Index steps = first.rows();
  const Eigen::Index batch = static_cast<Eigen::Index>(indices.size());
  RowMatrix<T> out(steps * batch, first.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    const auto& seq = inputs[indices[static_cast<std::size_t>(b)]];
    if (seq.rows() != steps || seq.cols() != first.cols())
      throw InvalidArgument("stack_sequences: inconsistent sequence shapes");
    for (Eigen::Index t = 0; t < steps; ++t) out.row(t * batch + b) = seq.row(t);
  }
  return out;
}

template <typename T>
ForwardCache<T> forward_stacked(const LstmModelT<T>& model, const RowMatrix<T>& stacked,
                                int batch) {
  const int inferred = infer_batch(model, stacked);
  if (inferred != batch) throw InvalidArgument("forward_stacked: batch size mismatch");
  require_finite(stacked, "model input");
  ForwardCache<T> cache;
  cache.batch = batch;
  cache.steps = model.dims.sequence_length;
  layer_forward(model.layer1, stacked, batch, cache.steps, cache.layer1);
  layer_forward(model.layer2, cache.layer1.h, batch, cache.steps, cache.layer2);
  const auto last = cache.layer2.h.bottomRows(batch);
  cache.logits = last * model.out_w;
  cache.logits.rowwise() += model.out_b;
  softmax_rows(cache.logits, cache.probs);
  return cache;
}

template <typename T>
ForwardResult<T> forward(const LstmModelT<T>& model, const RowMatrix<T>& input) {
  if (input.rows() != model.dims.sequence_length || input.cols() != model.dims.input_dim)
    throw InvalidArgument("forward: input must be " + std::to_string(model.dims.sequence_length) +
                          " x " + std::to_string(model.dims.input_dim));
  ForwardResult<T> out;
  out.cache = forward_stacked(model, input, 1);
  out.probs = out.cache.probs.row(0);
  return out;
}

template <typename T>
LossAndGradients<T> loss_and_gradients_stacked(const LstmModelT<T>& model,
                                               const RowMatrix<T>& stacked,
                                               std::span<const int> labels, double clip_norm) {
  const int batch = infer_batch(model, stacked);
  check_labels(labels, model.dims.classes, batch);
  const auto cache = forward_stacked(model, stacked, batch);

  LossAndGradients<T> out;
  out.loss = cross_entropy(cache.logits, labels);
  if (!std::isfinite(out.loss)) throw NumericError("non-finite loss");

  const int H = model.dims.hidden;
  const int steps = cache.steps;
  out.grads = LstmModelT<T>::zeros(model.dims);

  RowMatrix<T> dlogits = cache.probs;
  for (int b = 0; b < batch; ++b) dlogits(b, labels[static_cast<std::size_t>(b)]) -= T(1);
  dlogits /= static_cast<T>(batch);

  const auto last = cache.layer2.h.bottomRows(batch);
  out.grads.out_w.noalias() = last.transpose() * dlogits;
  out.grads.out_b = dlogits.colwise().sum();

  RowMatrix<T> dh2 = RowMatrix<T>::Zero(static_cast<Eigen::Index>(batch) * steps, H);
  dh2.bottomRows(batch).noalias() = dlogits * model.out_w.transpose();
  const RowMatrix<T> dh1 =
      layer_backward(model.layer2, cache.layer2, batch, steps, dh2, out.grads.layer2, true);
  layer_backward(model.layer1, cache.layer1, batch, steps, dh1, out.grads.layer1, false);

  double sq = 0.0;
  out.grads.for_each_tensor([&](const T* data, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) sq += static_cast<double>(data[k]) * data[k];
  });
  out.grad_norm = std::sqrt(sq);
  if (!std::isfinite(out.grad_norm)) throw NumericError("non-finite gradient");
  if (clip_norm > 0 && out.grad_norm > clip_norm) {
    const T scale = static_cast<T>(clip_norm / out.grad_norm);
    out.grads.for_each_tensor([&](T* data, std::size_t n) {
      for (std::size_t k = 0; k < n; ++k) data[k] *= scale;
    });
    out.clipped = true;
  }
  return out;
}

template <typename T>
LossAndGradients<T> loss_and_gradients(const LstmModelT<T>& model,
                                       std::span<const RowMatrix<T>> inputs,
                                       std::span<const int> labels, double clip_norm) {
  if (inputs.empty()) throw InvalidArgument("empty batch");
  std::vector<std::size_t> idx(inputs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return loss_and_gradients_stacked(model, stack_sequences(inputs, std::span<const std::size_t>(idx)),
                                    labels, clip_norm);
}

template <typename T>
double batch_loss(const LstmModelT<T>& model, const RowMatrix<T>& stacked,
                  std::span<const int> labels) {
  const int batch = infer_batch(model, stacked);
  check_labels(labels, model.dims.classes, batch);
  return cross_entropy(forward_stacked(model, stacked, batch).logits, labels);
}

// ---------------------------------------------------------------------------
// Embedding and inference

RowMatrix<float> embed_window(const SentenceWindow& window, const EmbeddingMatrix& matrix,
                              int sequence_length) {
  RowMatrix<float> out = RowMatrix<float>::Zero(sequence_length, matrix.dimension);
  const auto n = window.tokens.size();
  const auto steps = static_cast<std::size_t>(sequence_length);
  const std::size_t first = n > steps ? n - steps : 0;
  const std::size_t offset = steps - (n - first);
  for (std::size_t k = first; k < n; ++k) {
    if (const auto vec = matrix.lookup(window.tokens[k])) {
      out.row(static_cast<Eigen::Index>(offset + k - first)) =
          Eigen::Map<const RowVector<float>>(vec->data(), matrix.dimension);
    }
  }
  return out;
}

int argmax_lowest(std::span<const float> probs) {
  int best = 0;
  for (std::size_t k = 1; k < probs.size(); ++k)
    if (probs[k] > probs[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
  return best;
}

Prediction predict_embedded(const LstmModel& model, const RowMatrix<float>& input) {
  const auto result = forward(model, input);
  Prediction p;
  p.probs.assign(result.probs.data(), result.probs.data() + result.probs.size());
  p.label = argmax_lowest(p.probs);
  return p;
}

Prediction predict(const LstmModel& model, const SentenceWindow& window,
                   const EmbeddingMatrix& matrix) {
  if (matrix.dimension != model.dims.input_dim)
    throw InvalidArgument("embedding dimension " + std::to_string(matrix.dimension) +
                          " does not match model input " + std::to_string(model.dims.input_dim));
  return predict_embedded(model, embed_window(window, matrix, model.dims.sequence_length));
}

// ---------------------------------------------------------------------------
// Serialisation

void save_model(const LstmModel& model, std::ostream& out) {
  out.write(kModelMagic, 4);
  auto put = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  put(kModelFormatVersion);
  put(static_cast<std::uint32_t>(model.dims.input_dim));
  put(static_cast<std::uint32_t>(model.dims.hidden));
  put(static_cast<std::uint32_t>(model.dims.classes));
  put(static_cast<std::uint32_t>(model.dims.sequence_length));
  for (const auto* layer : {&model.layer1, &model.layer2}) {
    for (Gate g : kGates) {
      write_block(out, layer->wx_gate(g));
      write_block(out, layer->wh_gate(g));
      write_block(out, layer->b_gate(g));
    }
  }
  write_block(out, model.out_w);
  write_block(out, model.out_b);
}

void save_model(const LstmModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  save_model(model, out);
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

LstmModel load_model(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("model file truncated in header");
  if (!std::equal(magic, magic + 4, kModelMagic)) throw FormatError("not a model file (bad magic)");
  auto get = [&](const char* what) {
    std::uint32_t v;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(v)))
      throw FormatError(std::string("model file truncated reading ") + what);
    return v;
  };
  const auto version = get("version");
  if (version != kModelFormatVersion)
    throw FormatError("unsupported model format version " + std::to_string(version));
  LstmDims dims;
  const auto d = get("input dim");
  const auto h = get("hidden size");
  const auto c = get("class count");
  const auto t = get("sequence length");
  constexpr std::uint32_t kLimit = 1u << 16;
  if (d == 0 || h == 0 || c == 0 || t == 0 || d > kLimit || h > kLimit || c > kLimit || t > kLimit)
    throw FormatError("model header has implausible dimensions");
  dims.input_dim = static_cast<int>(d);
  dims.hidden = static_cast<int>(h);
  dims.classes = static_cast<int>(c);
  dims.sequence_length = static_cast<int>(t);
  auto model = LstmModel::zeros(dims);
  for (auto* layer : {&model.layer1, &model.layer2}) {
    for (Gate g : kGates) {
      read_block(in, layer->wx_gate(g));
      read_block(in, layer->wh_gate(g));
      read_block(in, layer->b_gate(g));
    }
  }
  read_block(in, model.out_w);
  read_block(in, model.out_b);
  if (in.peek() != std::char_traits<char>::eof())
    throw FormatError("trailing bytes after model payload");
  return model;
}

LstmModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model: " + path.string());
  return load_model(in);
}

// ---------------------------------------------------------------------------
// Explicit instantiations

#define WSD_INSTANTIATE_LSTM(T)                                                                   \
  template struct LstmLayerParams<T>;                                                             \
  template struct LstmModelT<T>;                                                                  \
  template CellOutput<T> lstm_cell_forward(const RowMatrix<T>&, const RowMatrix<T>&,              \
                                           const RowMatrix<T>&, const LstmLayerParams<T>&);       \
  template RowMatrix<T> stack_sequences(std::span<const RowMatrix<T>>,                            \
                                        std::span<const std::size_t>);                            \
  template ForwardCache<T> forward_stacked(const LstmModelT<T>&, const RowMatrix<T>&, int);       \
  template ForwardResult<T> forward(const LstmModelT<T>&, const RowMatrix<T>&);                   \
  template LossAndGradients<T> loss_and_gradients_stacked(                                        \
      const LstmModelT<T>&, const RowMatrix<T>&, std::span<const int>, double);                   \
  template LossAndGradients<T> loss_and_gradients(const LstmModelT<T>&,                           \
                                                  std::span<const RowMatrix<T>>,                  \
                                                  std::span<const int>, double);                  \
  template double batch_loss(const LstmModelT<T>&, const RowMatrix<T>&, std::span<const int>);

WSD_INSTANTIATE_LSTM(float)
WSD_INSTANTIATE_LSTM(double)

#undef WSD_INSTANTIATE_LSTM

}  // namespace wsd
