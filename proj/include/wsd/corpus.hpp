#pragma once

// Corpus ingestion: Georgian-script line filtering, sentence segmentation,
// homonym-centred window extraction, labelled dataset I/O and stratified
// splitting.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace wsd {

/// Maximum tokens in a window: the homonym plus six tokens on each side.
inline constexpr std::size_t kWindowLength = 13;
inline constexpr std::size_t kContextRadius = 6;

/// Header line required at the top of every window/dataset file.
inline constexpr std::string_view kDatasetHeader = "#wsd-v1";

using Token = std::string;
using Sentence = std::vector<Token>;

struct Sense {
  int id = 0;
  std::string gloss;
  std::string synonym;  // base form used by the fill-mask baseline
};

/// A homonym, every inflected surface form to match, and its sense inventory.
struct HomonymSpec {
  std::string lemma;
  std::vector<std::string> surface_forms;
  std::vector<Sense> senses;  // ordered by id, ids are 0..K-1

  bool matches(std::string_view token) const;
  std::size_t sense_count() const { return senses.size(); }

  /// Throws InvalidArgument when an invariant is violated.
  void validate() const;
};

/// Parses the key-value spec format:
///   lemma <word>
///   form <word>               (repeated)
///   sense <id> <gloss> <synonym>   (repeated)
/// Blank lines and lines starting with '#' are ignored.
HomonymSpec parse_homonym_spec(std::istream& in);
HomonymSpec load_homonym_spec(const std::filesystem::path& path);

struct SentenceWindow {
  std::vector<Token> tokens;
  std::size_t target_index = 0;
  std::string source_id;

  const Token& target() const { return tokens.at(target_index); }
};

/// OTHER marks labelled examples outside the sense inventory. It is written as
/// `-` in dataset files and never reaches a classifier.
struct SenseLabel {
  static constexpr int kOther = -1;
  int value = kOther;

  bool is_other() const { return value == kOther; }
  friend bool operator==(SenseLabel, SenseLabel) = default;
};

struct LabeledExample {
  SentenceWindow window;
  SenseLabel label;
};

struct SplitSpec {
  std::uint64_t seed = 42;
  double test_fraction = 0.2;
  double validation_fraction_of_train = 0.2;
  bool stratified = true;

  void validate() const;
};

struct DatasetSplit {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> validation;
  std::vector<LabeledExample> test;
};

struct TokenizerOptions {
  std::vector<char32_t> terminators{U'.', U'!', U'?', U'…'};
};

// ---------------------------------------------------------------------------
// Text operations

/// Returns the trimmed line iff every whitespace-delimited word, once leading
/// and trailing punctuation and digits are stripped, is made only of Mkhedruli
/// letters (U+10D0..U+10FF). Words that strip to nothing are ignored; a line
/// with no remaining word is rejected. `line` must be valid UTF-8.
std::optional<std::string> filter_georgian_line(std::string_view line);

std::vector<Sentence> segment_and_tokenize(std::string_view text,
                                           const TokenizerOptions& options = {});

/// One window per exact surface-form match, spanning at most kContextRadius
/// tokens on either side of the match and truncated at sentence edges.
std::vector<SentenceWindow> extract_windows(std::span<const Token> sentence,
                                            const HomonymSpec& spec,
                                            std::string_view source_id = {});

/// Strips leading and trailing punctuation/digits from a single token.
std::string strip_token(std::string_view token);

// ---------------------------------------------------------------------------
// Pipelines

struct PipelineStats {
  std::uint64_t lines_read = 0;
  std::uint64_t lines_invalid_utf8 = 0;
  std::uint64_t lines_kept = 0;
  std::uint64_t sentences = 0;
  std::uint64_t records_written = 0;
};

/// Filtering stage only. Writes one normalised sentence per line (tokens
/// joined by single spaces), or the filtered raw lines when `raw_lines` is set.
PipelineStats run_filter_pipeline(std::span<const std::filesystem::path> inputs,
                                  const std::filesystem::path& output,
                                  bool raw_lines = false,
                                  const TokenizerOptions& options = {});

/// filter -> segment -> extract, streamed in input order. Writes an
/// unlabelled window file and returns the number of windows written.
std::uint64_t run_extraction_pipeline(std::span<const std::filesystem::path> inputs,
                                      const HomonymSpec& spec,
                                      const std::filesystem::path& output,
                                      const TokenizerOptions& options = {},
                                      PipelineStats* stats = nullptr);

// ---------------------------------------------------------------------------
// Dataset files

void write_dataset(std::ostream& out, std::span<const LabeledExample> examples);
void write_dataset(const std::filesystem::path& path,
                   std::span<const LabeledExample> examples);

/// Parses and validates a dataset file. Errors name the line number and field.
std::vector<LabeledExample> parse_labeled_dataset(std::istream& in, const HomonymSpec& spec,
                                                  std::string_view source_name = "dataset");
std::vector<LabeledExample> load_labeled_dataset(const std::filesystem::path& path,
                                                 const HomonymSpec& spec);

/// Removes OTHER-labelled examples, preserving order.
std::vector<LabeledExample> drop_other(std::span<const LabeledExample> examples);

/// Rounds count * fraction to the nearest integer; exact halves go up (toward
/// the smaller, held-out part).
std::size_t held_out_count(std::size_t count, double fraction);

/// Per-class shuffle and allocation. Each part is returned in input order.
DatasetSplit stratified_split(std::span<const LabeledExample> examples, const SplitSpec& split,
                              std::size_t num_classes = 3);

/// Per-class example counts; OTHER is not counted.
std::vector<std::size_t> class_counts(std::span<const LabeledExample> examples,
                                      std::size_t num_classes);

/// FNV-1a over the serialised records; identifies a test set across runs.
std::uint64_t dataset_fingerprint(std::span<const LabeledExample> examples);

// ---------------------------------------------------------------------------
// UTF-8 helpers

/// Decodes UTF-8, returning nullopt on any invalid sequence.
std::optional<std::u32string> decode_utf8(std::string_view bytes);
std::string encode_utf8(std::u32string_view text);

bool is_mkhedruli(char32_t cp);
bool is_unicode_space(char32_t cp);
bool is_strippable(char32_t cp);

}  // namespace wsd
