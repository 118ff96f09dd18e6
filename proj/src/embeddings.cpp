#include "wsd/embeddings.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "wsd/error.hpp"
#include "wsd/random.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts need byte swapping");

namespace wsd {

namespace {

constexpr char kEmbeddingMagic[4] = {'W', 'S', 'D', 'E'};

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T)))
    throw FormatError(std::string("embedding file truncated while reading ") + what);
  return value;
}

void read_floats(std::istream& in, std::vector<float>& dst, std::size_t n, const char* what) {
  dst.resize(n);
  const auto bytes = static_cast<std::streamsize>(n * sizeof(float));
  if (n && !in.read(reinterpret_cast<char*>(dst.data()), bytes))
    throw FormatError(std::string("embedding file truncated in ") + what);
}

using VecMap = Eigen::Map<Eigen::VectorXf>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXf>;

float sigmoidf(float x) {
  if (x >= 0) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}

std::vector<std::uint32_t> build_unigram_table(const Vocabulary& vocab, std::size_t size) {
  std::vector<std::uint32_t> table(size);
  if (vocab.empty() || size == 0) return table;
  double total = 0.0;
  for (auto c : vocab.counts()) total += std::pow(static_cast<double>(c), 0.75);
  std::size_t word = 0;
  double cumulative = std::pow(static_cast<double>(vocab.count(0)), 0.75) / total;
  for (std::size_t a = 0; a < size; ++a) {
    table[a] = static_cast<std::uint32_t>(word);
    if (static_cast<double>(a) / static_cast<double>(size) > cumulative &&
        word + 1 < vocab.size()) {
      ++word;
      cumulative += std::pow(static_cast<double>(vocab.count(word)), 0.75) / total;
    }
  }
  return table;
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary Vocabulary::from_counts(const std::unordered_map<std::string, std::uint64_t>& counts,
                                   std::uint64_t min_count) {
  std::vector<std::pair<std::string, std::uint64_t>> kept;
  for (const auto& [w, c] : counts)
    if (c >= min_count) kept.emplace_back(w, c);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  return from_ordered(std::move(kept), min_count);
}

Vocabulary Vocabulary::from_ordered(std::vector<std::pair<std::string, std::uint64_t>> entries,
                                    std::uint64_t min_count) {
  Vocabulary v;
  v.min_count_ = min_count;
  v.words_.reserve(entries.size());
  v.counts_.reserve(entries.size());
  for (auto& [w, c] : entries) {
    if (!v.index_.emplace(w, v.words_.size()).second)
      throw InvalidArgument("duplicate vocabulary word '" + w + "'");
    v.words_.push_back(std::move(w));
    v.counts_.push_back(c);
  }
  return v;
}

std::optional<std::size_t> Vocabulary::find(std::string_view word) const {
  const auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::unordered_map<std::string, std::uint64_t> count_tokens(std::istream& in) {
  std::unordered_map<std::string, std::uint64_t> counts;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream words(line);
    std::string w;
    while (words >> w) ++counts[w];
  }
  return counts;
}

Vocabulary build_vocabulary(std::istream& corpus, std::uint64_t min_count) {
  auto vocab = Vocabulary::from_counts(count_tokens(corpus), min_count);
  if (vocab.empty())
    throw InvalidArgument("empty vocabulary: no token reaches min_count " +
                          std::to_string(min_count));
  return vocab;
}

Vocabulary build_vocabulary(const std::filesystem::path& corpus_path, std::uint64_t min_count) {
  std::ifstream in(corpus_path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus: " + corpus_path.string());
  return build_vocabulary(in, min_count);
}

void EmbeddingConfig::validate() const {
  if (dimension < 1) throw InvalidArgument("embedding dimension must be >= 1");
  if (window < 1) throw InvalidArgument("window must be >= 1");
  if (epochs < 0) throw InvalidArgument("epochs must be >= 0");
  if (negative_samples < 1) throw InvalidArgument("negative samples must be >= 1");
  if (!(learning_rate > 0)) throw InvalidArgument("learning rate must be positive");
  if (unigram_table_size < 1) throw InvalidArgument("unigram table size must be >= 1");
}

// ---------------------------------------------------------------------------
// Matrix

std::optional<std::span<const float>> EmbeddingMatrix::lookup(std::string_view word) const {
  const auto i = vocab.find(word);
  if (!i) return std::nullopt;
  return input_row(*i);
}

bool EmbeddingMatrix::all_finite() const {
  auto finite = [](float x) { return std::isfinite(x); };
  return std::all_of(input_vectors.begin(), input_vectors.end(), finite) &&
         std::all_of(output_vectors.begin(), output_vectors.end(), finite);
}

EmbeddingMatrix initialize_embeddings(Vocabulary vocab, const EmbeddingConfig& config) {
  config.validate();
  EmbeddingMatrix m;
  m.vocab = std::move(vocab);
  m.dimension = config.dimension;
  const std::size_t n = m.vocab.size() * static_cast<std::size_t>(config.dimension);
  m.input_vectors.resize(n);
  m.output_vectors.assign(n, 0.0f);
  Rng rng(config.seed);
  const double half = 0.5 / config.dimension;
  for (auto& x : m.input_vectors) x = static_cast<float>(rng.uniform(-half, half));
  return m;
}

// ---------------------------------------------------------------------------
// Training

double sgns_pair_step(std::size_t center, std::size_t context,
                      std::span<const std::size_t> negatives, double lr,
                      EmbeddingMatrix& matrix) {
  const auto d = static_cast<Eigen::Index>(matrix.dimension);
  const auto rows = matrix.rows();
  if (center >= rows || context >= rows)
    throw InvalidArgument("sgns_pair_step: index out of range");
  for (auto n : negatives)
    if (n >= rows) throw InvalidArgument("sgns_pair_step: negative index out of range");

  VecMap v(matrix.input_row(center).data(), d);
  const Eigen::VectorXf v0 = v;
  Eigen::VectorXf grad_v = Eigen::VectorXf::Zero(d);
  const auto step = static_cast<float>(lr);

  // All scores use the pre-update vectors; the output-vector updates are then
  // applied in order, which equals one simultaneous gradient step.
  thread_local std::vector<float> coeff;
  coeff.resize(negatives.size() + 1);
  double loss = 0.0;
  {
    ConstVecMap u(matrix.output_row(context).data(), d);
    const float s = u.dot(v0);
    loss -= stable_log_sigmoid(s);
    coeff[0] = sigmoidf(s) - 1.0f;
    grad_v.noalias() += coeff[0] * u;
  }
  for (std::size_t n = 0; n < negatives.size(); ++n) {
    ConstVecMap u(matrix.output_row(negatives[n]).data(), d);
    const float s = u.dot(v0);
    loss -= stable_log_sigmoid(-s);
    coeff[n + 1] = sigmoidf(s);
    grad_v.noalias() += coeff[n + 1] * u;
  }
  VecMap(matrix.output_row(context).data(), d).noalias() -= (step * coeff[0]) * v0;
  for (std::size_t n = 0; n < negatives.size(); ++n)
    VecMap(matrix.output_row(negatives[n]).data(), d).noalias() -= (step * coeff[n + 1]) * v0;
  v.noalias() -= step * grad_v;
  return loss;
}

EmbeddingMatrix train_embeddings(const std::vector<std::vector<std::string>>& sentences,
                                 const EmbeddingConfig& config, EmbeddingTrainingLog* log) {
  config.validate();
  std::unordered_map<std::string, std::uint64_t> counts;
  for (const auto& s : sentences)
    for (const auto& w : s) ++counts[w];
  auto vocab = Vocabulary::from_counts(counts, config.min_count);
  if (vocab.empty())
    throw InvalidArgument("empty vocabulary: no token reaches min_count " +
                          std::to_string(config.min_count));

  // Index sequences with out-of-vocabulary tokens removed.
  std::vector<std::vector<std::uint32_t>> corpus;
  corpus.reserve(sentences.size());
  std::uint64_t total_words = 0;
  for (const auto& s : sentences) {
    std::vector<std::uint32_t> ids;
    for (const auto& w : s)
      if (auto i = vocab.find(w)) ids.push_back(static_cast<std::uint32_t>(*i));
    total_words += ids.size();
    if (!ids.empty()) corpus.push_back(std::move(ids));
  }

  EmbeddingMatrix matrix = initialize_embeddings(std::move(vocab), config);
  if (log) *log = {};
  if (config.epochs == 0) return matrix;

  const auto table = build_unigram_table(matrix.vocab, config.unigram_table_size);
  std::vector<double> keep_prob;
  if (config.subsample > 0) {
    keep_prob.resize(matrix.rows());
    for (std::size_t i = 0; i < matrix.rows(); ++i) {
      const double f = static_cast<double>(matrix.vocab.count(i)) /
                       static_cast<double>(total_words);
      const double t = config.subsample;
      keep_prob[i] = std::min(1.0, (std::sqrt(f / t) + 1.0) * t / f);
    }
  }

  // A separate stream from initialisation keeps epochs=0 independent of it.
  Rng rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
  const double total_steps = static_cast<double>(config.epochs) * static_cast<double>(total_words);
  std::uint64_t processed = 0;
  std::vector<std::size_t> negatives;
  std::vector<std::uint32_t> kept;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    std::uint64_t epoch_pairs = 0;
    for (const auto& sentence : corpus) {
      const std::vector<std::uint32_t>* words = &sentence;
      if (!keep_prob.empty()) {
        kept.clear();
        for (auto w : sentence)
          if (rng.uniform() < keep_prob[w]) kept.push_back(w);
        words = &kept;
      }
      const auto len = words->size();
      for (std::size_t pos = 0; pos < len; ++pos) {
        const double progress = static_cast<double>(processed) / total_steps;
        const double lr = std::max(config.min_learning_rate,
                                   config.learning_rate -
                                       (config.learning_rate - config.min_learning_rate) * progress);
        ++processed;
        const auto radius = 1 + rng.below(static_cast<std::uint64_t>(config.window));
        const std::size_t lo = pos >= radius ? pos - radius : 0;
        const std::size_t hi = std::min(len - 1, pos + radius);
        const std::size_t center = (*words)[pos];
        for (std::size_t c = lo; c <= hi; ++c) {
          if (c == pos) continue;
          const std::size_t context = (*words)[c];
          negatives.clear();
          for (int k = 0; k < config.negative_samples; ++k) {
            std::size_t neg = context;
            for (int attempt = 0; attempt < 16 && neg == context; ++attempt)
              neg = table[rng.below(table.size())];
            if (neg != context) negatives.push_back(neg);
          }
          epoch_loss += sgns_pair_step(center, context, negatives, lr, matrix);
          ++epoch_pairs;
        }
      }
    }
    if (log) {
      log->epoch_mean_loss.push_back(epoch_pairs ? epoch_loss / static_cast<double>(epoch_pairs)
                                                 : 0.0);
      log->pairs += epoch_pairs;
    }
  }
  if (!matrix.all_finite()) throw NumericError("embedding training produced non-finite vectors");
  return matrix;
}

EmbeddingMatrix train_embeddings(const std::filesystem::path& corpus_path,
                                 const EmbeddingConfig& config, EmbeddingTrainingLog* log) {
  std::ifstream in(corpus_path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus: " + corpus_path.string());
  std::vector<std::vector<std::string>> sentences;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream words(line);
    std::vector<std::string> s;
    std::string w;
    while (words >> w) s.push_back(std::move(w));
    if (!s.empty()) sentences.push_back(std::move(s));
  }
  if (in.bad()) throw IoError("read failed: " + corpus_path.string());
  return train_embeddings(sentences, config, log);
}

// ---------------------------------------------------------------------------
// Serialisation

void save_embeddings(const EmbeddingMatrix& matrix, std::ostream& out,
                     bool include_output_vectors) {
  out.write(kEmbeddingMagic, 4);
  write_pod(out, kEmbeddingFormatVersion);
  write_pod(out, static_cast<std::uint64_t>(matrix.rows()));
  write_pod(out, static_cast<std::uint64_t>(matrix.dimension));
  for (std::size_t i = 0; i < matrix.rows(); ++i) {
    const auto& w = matrix.vocab.word(i);
    write_pod(out, static_cast<std::uint32_t>(w.size()));
    out.write(w.data(), static_cast<std::streamsize>(w.size()));
    write_pod(out, matrix.vocab.count(i));
  }
  out.write(reinterpret_cast<const char*>(matrix.input_vectors.data()),
            static_cast<std::streamsize>(matrix.input_vectors.size() * sizeof(float)));
  const std::uint8_t flag = include_output_vectors ? 1 : 0;
  write_pod(out, flag);
  if (include_output_vectors)
    out.write(reinterpret_cast<const char*>(matrix.output_vectors.data()),
              static_cast<std::streamsize>(matrix.output_vectors.size() * sizeof(float)));
}

void save_embeddings(const EmbeddingMatrix& matrix, const std::filesystem::path& path,
                     bool include_output_vectors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  save_embeddings(matrix, out, include_output_vectors);
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

EmbeddingMatrix load_embeddings(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("embedding file truncated in header");
  if (!std::equal(magic, magic + 4, kEmbeddingMagic))
    throw FormatError("not an embedding file (bad magic)");
  const auto version = read_pod<std::uint32_t>(in, "version");
  if (version != kEmbeddingFormatVersion)
    throw FormatError("unsupported embedding format version " + std::to_string(version));
  const auto rows = read_pod<std::uint64_t>(in, "row count");
  const auto dim = read_pod<std::uint64_t>(in, "dimension");
  if (dim == 0 || dim > (1u << 20)) throw FormatError("implausible embedding dimension");

  std::vector<std::pair<std::string, std::uint64_t>> entries;
  std::uint64_t min_count = UINT64_MAX;
  for (std::uint64_t i = 0; i < rows; ++i) {
    const auto len = read_pod<std::uint32_t>(in, "word length");
    std::string w(len, '\0');
    if (len && !in.read(w.data(), len)) throw FormatError("embedding file truncated in vocabulary");
    const auto count = read_pod<std::uint64_t>(in, "word count");
    min_count = std::min(min_count, count);
    entries.emplace_back(std::move(w), count);
  }
  EmbeddingMatrix m;
  try {
    m.vocab = Vocabulary::from_ordered(std::move(entries), rows ? min_count : 0);
  } catch (const InvalidArgument& e) {
    throw FormatError(e.what());
  }
  m.dimension = static_cast<int>(dim);
  const std::size_t n = static_cast<std::size_t>(rows * dim);
  read_floats(in, m.input_vectors, n, "input vectors");
  const auto flag = read_pod<std::uint8_t>(in, "output flag");
  if (flag == 1) {
    read_floats(in, m.output_vectors, n, "output vectors");
  } else if (flag == 0) {
    m.output_vectors.assign(n, 0.0f);
  } else {
    throw FormatError("invalid output-vector flag");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after payload");
  return m;
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open embeddings: " + path.string());
  return load_embeddings(in);
}

// ---------------------------------------------------------------------------
// Inspection

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += static_cast<double>(a[k]) * b[k];
    aa += static_cast<double>(a[k]) * a[k];
    bb += static_cast<double>(b[k]) * b[k];
  }
  if (aa == 0 || bb == 0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

std::vector<Neighbor> nearest_neighbors(const EmbeddingMatrix& matrix, std::string_view word,
                                        std::size_t k) {
  if (k < 1) throw InvalidArgument("k must be >= 1");
  const auto query = matrix.vocab.find(word);
  if (!query) throw NotFound("word not in vocabulary: '" + std::string(word) + "'");
  std::vector<Neighbor> all;
  all.reserve(matrix.rows());
  const auto q = matrix.input_row(*query);
  for (std::size_t i = 0; i < matrix.rows(); ++i) {
    if (i == *query) continue;
    all.push_back({matrix.vocab.word(i), i, cosine_similarity(q, matrix.input_row(i))});
  }
  const auto take = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(),
                    [](const Neighbor& a, const Neighbor& b) {
                      return a.similarity != b.similarity ? a.similarity > b.similarity
                                                          : a.index < b.index;
                    });
  all.resize(take);
  return all;
}

}  // namespace wsd
