#include "wsd/trainer.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "wsd/error.hpp"
#include "wsd/random.hpp"

namespace wsd {

namespace {

template <typename Block>
void glorot_fill(Block&& block, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(block.rows() + block.cols()));
  for (Eigen::Index r = 0; r < block.rows(); ++r)
    for (Eigen::Index c = 0; c < block.cols(); ++c)
      block(r, c) = static_cast<float>(rng.uniform(-limit, limit));
}

class Optimizer {
 public:
  Optimizer(const ClassifierTrainConfig& config, const LstmModel& shape)
      : config_(config),
        m_(LstmModel::zeros(shape.dims)),
        v_(LstmModel::zeros(shape.dims)) {}

  void step(LstmModel& params, const LstmModel& grads) {
    ++t_;
    std::vector<float*> p, m, v;
    std::vector<const float*> g;
    std::vector<std::size_t> sizes;
    params.for_each_tensor([&](float* d, std::size_t n) {
      p.push_back(d);
      sizes.push_back(n);
    });
    grads.for_each_tensor([&](const float* d, std::size_t) { g.push_back(d); });
    m_.for_each_tensor([&](float* d, std::size_t) { m.push_back(d); });
    v_.for_each_tensor([&](float* d, std::size_t) { v.push_back(d); });

    const auto lr = static_cast<float>(config_.learning_rate);
    if (config_.optimizer == OptimizerKind::kSgd) {
      for (std::size_t k = 0; k < p.size(); ++k)
        for (std::size_t i = 0; i < sizes[k]; ++i) p[k][i] -= lr * g[k][i];
      return;
    }
    const auto b1 = static_cast<float>(config_.beta1);
    const auto b2 = static_cast<float>(config_.beta2);
    const auto eps = static_cast<float>(config_.epsilon);
    const auto c1 = static_cast<float>(1.0 - std::pow(config_.beta1, t_));
    const auto c2 = static_cast<float>(1.0 - std::pow(config_.beta2, t_));
    for (std::size_t k = 0; k < p.size(); ++k) {
      for (std::size_t i = 0; i < sizes[k]; ++i) {
        const float gi = g[k][i];
        m[k][i] = b1 * m[k][i] + (1.0f - b1) * gi;
        v[k][i] = b2 * v[k][i] + (1.0f - b2) * gi * gi;
        const float mhat = m[k][i] / c1;
        const float vhat = v[k][i] / c2;
        p[k][i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

 private:
  ClassifierTrainConfig config_;
  LstmModel m_;
  LstmModel v_;
  int t_ = 0;
};

}  // namespace

void ClassifierTrainConfig::validate() const {
  if (max_epochs < 1) throw InvalidArgument("max_epochs must be >= 1");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (!(learning_rate > 0)) throw InvalidArgument("learning rate must be positive");
  if (early_stopping && early_stopping_patience < 1)
    throw InvalidArgument("early-stopping patience must be >= 1");
  if (early_stopping && early_stopping_patience >= max_epochs)
    throw InvalidArgument("early-stopping patience must be smaller than max_epochs");
  if (gradient_clip_norm < 0) throw InvalidArgument("gradient clip norm must be >= 0");
}

EncodedExamples encode_examples(std::span<const LabeledExample> examples,
                                const EmbeddingMatrix& matrix, int sequence_length,
                                int num_classes) {
  EncodedExamples out;
  out.inputs.reserve(examples.size());
  out.labels.reserve(examples.size());
  for (const auto& ex : examples) {
    if (ex.label.is_other() || ex.label.value >= num_classes)
      throw InvalidArgument("example " + ex.window.source_id +
                            " has a label outside the classifier's classes");
    out.inputs.push_back(embed_window(ex.window, matrix, sequence_length));
    out.labels.push_back(ex.label.value);
  }
  return out;
}

LstmModel initialize_model(const LstmDims& dims, std::uint64_t seed) {
  auto model = LstmModel::zeros(dims);
  Rng rng(seed);
  constexpr Gate kGates[] = {Gate::kInput, Gate::kForget, Gate::kCell, Gate::kOutput};
  for (auto* layer : {&model.layer1, &model.layer2}) {
    for (Gate g : kGates) {
      glorot_fill(layer->wx_gate(g), rng);
      glorot_fill(layer->wh_gate(g), rng);
    }
    layer->b_gate(Gate::kForget).setOnes();
  }
  glorot_fill(model.out_w, rng);
  return model;
}

LossAccuracy evaluate_loss_accuracy(const LstmModel& model, const EncodedExamples& data,
                                    int batch_size) {
  if (data.size() == 0) return {};
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto stacked = stack_sequences(std::span<const RowMatrix<float>>(data.inputs),
                                         std::span<const std::size_t>(idx));
    const auto labels = std::span<const int>(data.labels).subspan(start, end - start);
    const auto cache = forward_stacked(model, stacked, static_cast<int>(idx.size()));
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto row = cache.logits.row(static_cast<Eigen::Index>(b)).cast<double>();
      const double m = row.maxCoeff();
      const double lse = m + std::log((row.array() - m).exp().sum());
      loss_sum += lse - row(labels[b]);
      const auto probs = cache.probs.row(static_cast<Eigen::Index>(b));
      const int pred =
          argmax_lowest(std::span<const float>(probs.data(), static_cast<std::size_t>(probs.size())));
      if (pred == labels[b]) ++correct;
    }
  }
  return {loss_sum / static_cast<double>(data.size()),
          static_cast<double>(correct) / static_cast<double>(data.size())};
}

std::vector<int> predict_all(const LstmModel& model, const EncodedExamples& data,
                             int batch_size) {
  std::vector<int> out;
  out.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.inputs.size();
       start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(data.inputs.size(), start + static_cast<std::size_t>(batch_size));
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto stacked = stack_sequences(std::span<const RowMatrix<float>>(data.inputs),
                                         std::span<const std::size_t>(idx));
    const auto cache = forward_stacked(model, stacked, static_cast<int>(idx.size()));
    for (Eigen::Index b = 0; b < cache.probs.rows(); ++b) {
      const auto row = cache.probs.row(b);
      out.push_back(
          argmax_lowest(std::span<const float>(row.data(), static_cast<std::size_t>(row.size()))));
    }
  }
  return out;
}

TrainedClassifier train_classifier(const EncodedExamples& train,
                                   const EncodedExamples& validation, const LstmDims& dims,
                                   const ClassifierTrainConfig& config,
                                   const EpochCallback& on_epoch) {
  config.validate();
  dims.validate();
  if (train.size() == 0) throw InvalidArgument("training set is empty");
  if (config.early_stopping && validation.size() == 0)
    throw InvalidArgument("early stopping needs a non-empty validation set");

  TrainedClassifier result;
  result.model = initialize_model(dims, config.seed);
  Optimizer optimizer(config, result.model);
  Rng shuffle_rng(config.seed ^ 0xD1B54A32D192ED03ULL);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> batch_labels;
  const bool has_validation = validation.size() > 0;
  double best_loss = std::numeric_limits<double>::infinity();
  LstmModel best_model = result.model;
  int since_best = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle_rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size), ++batch_index) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      batch_labels.clear();
      for (auto i : idx) batch_labels.push_back(train.labels[i]);
      const auto stacked = stack_sequences(std::span<const RowMatrix<float>>(train.inputs), idx);
      LossAndGradients<float> lg;
      try {
        lg = loss_and_gradients_stacked(result.model, stacked, std::span<const int>(batch_labels),
                                        config.gradient_clip_norm);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_index));
      }
      loss_sum += lg.loss * static_cast<double>(idx.size());
      optimizer.step(result.model, lg.grads);
    }
    if (!result.model.all_finite())
      throw NumericError("non-finite weights after epoch " + std::to_string(epoch));

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(train.size());
    if (has_validation) {
      const auto va = evaluate_loss_accuracy(result.model, validation);
      record.validation_loss = va.loss;
      record.validation_accuracy = va.accuracy;
    }
    result.history.epochs.push_back(record);
    if (on_epoch) on_epoch(record);

    if (!has_validation) continue;
    if (record.validation_loss < best_loss) {
      best_loss = record.validation_loss;
      result.history.best_epoch = epoch;
      if (config.early_stopping) best_model = result.model;
      since_best = 0;
    } else if (config.early_stopping && ++since_best >= config.early_stopping_patience) {
      result.history.stopped_early = true;
      break;
    }
  }
  if (config.early_stopping) result.model = std::move(best_model);
  return result;
}

TrainedClassifier train_classifier(std::span<const LabeledExample> train,
                                   std::span<const LabeledExample> validation,
                                   const EmbeddingMatrix& matrix,
                                   const ClassifierTrainConfig& config,
                                   const EpochCallback& on_epoch) {
  LstmDims dims;
  dims.input_dim = matrix.dimension;
  const auto encoded_train = encode_examples(train, matrix, dims.sequence_length, dims.classes);
  const auto encoded_val = encode_examples(validation, matrix, dims.sequence_length, dims.classes);
  return train_classifier(encoded_train, encoded_val, dims, config, on_epoch);
}

}  // namespace wsd
