#pragma once

// Vocabulary construction and skip-gram negative-sampling word vectors.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace wsd {

class Vocabulary {
 public:
  Vocabulary() = default;

  /// Keeps words with count >= min_count, ordered by descending count and
  /// then lexicographically.
  static Vocabulary from_counts(const std::unordered_map<std::string, std::uint64_t>& counts,
                                std::uint64_t min_count);
  /// Takes words in the given order. Throws on duplicates.
  static Vocabulary from_ordered(std::vector<std::pair<std::string, std::uint64_t>> entries,
                                 std::uint64_t min_count = 0);

  std::size_t size() const { return words_.size(); }
  bool empty() const { return words_.empty(); }
  const std::string& word(std::size_t index) const { return words_.at(index); }
  std::uint64_t count(std::size_t index) const { return counts_.at(index); }
  std::uint64_t min_count() const { return min_count_; }
  std::optional<std::size_t> find(std::string_view word) const;

  const std::vector<std::string>& words() const { return words_; }
  const std::vector<std::uint64_t>& counts() const { return counts_; }

  /// Equal words and counts; min_count is not part of identity.
  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.words_ == b.words_ && a.counts_ == b.counts_;
  }

 private:
  std::vector<std::string> words_;
  std::vector<std::uint64_t> counts_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t min_count_ = 0;
};

struct EmbeddingConfig {
  int dimension = 128;
  int window = 10;
  std::uint64_t min_count = 10;
  int epochs = 20;
  int negative_samples = 5;
  double learning_rate = 0.025;
  double min_learning_rate = 0.0001;
  std::size_t unigram_table_size = 10'000'000;
  /// Frequent-word subsampling threshold; 0 disables it.
  double subsample = 0.0;
  std::uint64_t seed = 42;

  void validate() const;
};

/// Input (word) and output (context) vectors, row-major V x D float32.
struct EmbeddingMatrix {
  Vocabulary vocab;
  int dimension = 0;
  std::vector<float> input_vectors;
  std::vector<float> output_vectors;

  std::size_t rows() const { return vocab.size(); }
  std::span<float> input_row(std::size_t i) {
    return {input_vectors.data() + i * static_cast<std::size_t>(dimension),
            static_cast<std::size_t>(dimension)};
  }
  std::span<const float> input_row(std::size_t i) const {
    return {input_vectors.data() + i * static_cast<std::size_t>(dimension),
            static_cast<std::size_t>(dimension)};
  }
  std::span<float> output_row(std::size_t i) {
    return {output_vectors.data() + i * static_cast<std::size_t>(dimension),
            static_cast<std::size_t>(dimension)};
  }
  std::span<const float> output_row(std::size_t i) const {
    return {output_vectors.data() + i * static_cast<std::size_t>(dimension),
            static_cast<std::size_t>(dimension)};
  }

  /// Lookup by word; nullopt when out of vocabulary.
  std::optional<std::span<const float>> lookup(std::string_view word) const;

  bool all_finite() const;
};

/// Counts tokens of a tokenised corpus (one sentence per line, space separated).
std::unordered_map<std::string, std::uint64_t> count_tokens(std::istream& in);

Vocabulary build_vocabulary(std::istream& corpus, std::uint64_t min_count);
Vocabulary build_vocabulary(const std::filesystem::path& corpus_path, std::uint64_t min_count);

// ---------------------------------------------------------------------------
// Negative-sampling objective for one (center, context) pair:
//   L = -log s(u_ctx . v) - sum_n log s(-u_n . v)
// Gradients are written for v, u_ctx and every u_n. Exposed as a template so
// tests can check it at double precision.

inline double stable_log_sigmoid(double x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

template <typename T>
struct SgnsGradients {
  std::vector<T> center;                 // dL/dv
  std::vector<T> context;                // dL/du_ctx
  std::vector<std::vector<T>> negatives; // dL/du_n
};

template <typename T>
double sgns_pair_gradients(std::span<const T> center, std::span<const T> context,
                           std::span<const std::span<const T>> negatives,
                           SgnsGradients<T>& grads) {
  const std::size_t d = center.size();
  auto dot = [d](std::span<const T> a, std::span<const T> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(a[k]) * static_cast<double>(b[k]);
    return s;
  };
  auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };

  grads.center.assign(d, T(0));
  grads.context.assign(d, T(0));
  grads.negatives.assign(negatives.size(), std::vector<T>(d, T(0)));

  const double pos = dot(context, center);
  double loss = -stable_log_sigmoid(pos);
  const double g_pos = sigmoid(pos) - 1.0;
  for (std::size_t k = 0; k < d; ++k) {
    grads.center[k] += static_cast<T>(g_pos * static_cast<double>(context[k]));
    grads.context[k] = static_cast<T>(g_pos * static_cast<double>(center[k]));
  }
  for (std::size_t n = 0; n < negatives.size(); ++n) {
    const double s = dot(negatives[n], center);
    loss -= stable_log_sigmoid(-s);
    const double g_neg = sigmoid(s);
    for (std::size_t k = 0; k < d; ++k) {
      grads.center[k] += static_cast<T>(g_neg * static_cast<double>(negatives[n][k]));
      grads.negatives[n][k] = static_cast<T>(g_neg * static_cast<double>(center[k]));
    }
  }
  return loss;
}

/// One SGD step on the pair objective; updates the center's input vector and
/// the context/negative output vectors in place. Returns the loss measured
/// before the update.
double sgns_pair_step(std::size_t center, std::size_t context,
                      std::span<const std::size_t> negatives, double lr,
                      EmbeddingMatrix& matrix);

/// Optional per-epoch diagnostics.
struct EmbeddingTrainingLog {
  std::vector<double> epoch_mean_loss;
  std::uint64_t pairs = 0;
};

/// Vectors initialised uniform in [-0.5/D, 0.5/D] for inputs, zero outputs.
EmbeddingMatrix initialize_embeddings(Vocabulary vocab, const EmbeddingConfig& config);

EmbeddingMatrix train_embeddings(const std::vector<std::vector<std::string>>& sentences,
                                 const EmbeddingConfig& config,
                                 EmbeddingTrainingLog* log = nullptr);
EmbeddingMatrix train_embeddings(const std::filesystem::path& corpus_path,
                                 const EmbeddingConfig& config,
                                 EmbeddingTrainingLog* log = nullptr);

// Binary format: "WSDE", u32 version, u64 V, u64 D, vocabulary block,
// V*D float32 input table, u8 flag, optional V*D float32 output table.
inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;

void save_embeddings(const EmbeddingMatrix& matrix, std::ostream& out,
                     bool include_output_vectors = true);
void save_embeddings(const EmbeddingMatrix& matrix, const std::filesystem::path& path,
                     bool include_output_vectors = true);
EmbeddingMatrix load_embeddings(std::istream& in);
EmbeddingMatrix load_embeddings(const std::filesystem::path& path);

struct Neighbor {
  std::string word;
  std::size_t index = 0;
  double similarity = 0.0;
};

std::vector<Neighbor> nearest_neighbors(const EmbeddingMatrix& matrix, std::string_view word,
                                        std::size_t k);

double cosine_similarity(std::span<const float> a, std::span<const float> b);

}  // namespace wsd
