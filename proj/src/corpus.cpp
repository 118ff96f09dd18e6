#include "wsd/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "wsd/error.hpp"
#include "wsd/random.hpp"

namespace wsd {

namespace {

std::string_view trim_ascii(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n\f\v");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n\f\v");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_ascii_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  return out;
}

void finish_output(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

std::u32string_view strip_view(std::u32string_view word) {
  std::size_t b = 0;
  std::size_t e = word.size();
  while (b < e && is_strippable(word[b])) ++b;
  while (e > b && is_strippable(word[e - 1])) --e;
  return word.substr(b, e - b);
}

// Splits a decoded sentence on Unicode whitespace.
std::vector<std::u32string_view> split_words(std::u32string_view text) {
  std::vector<std::u32string_view> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_unicode_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_unicode_space(text[j])) ++j;
    if (j > i) words.push_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

[[noreturn]] void record_error(std::string_view source, std::size_t line, std::string_view field,
                               const std::string& what) {
  std::ostringstream msg;
  msg << source << ":" << line << ": field '" << field << "': " << what;
  throw FormatError(msg.str());
}

std::string join_tokens(std::span<const Token> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

void write_record(std::ostream& out, const LabeledExample& ex) {
  if (ex.label.is_other())
    out << '-';
  else
    out << ex.label.value;
  out << '\t' << ex.window.target_index << '\t' << join_tokens(ex.window.tokens) << '\n';
}

}  // namespace

// ---------------------------------------------------------------------------
// UTF-8

std::optional<std::u32string> decode_utf8(std::string_view bytes) {
  std::u32string out;
  out.reserve(bytes.size());
  std::size_t i = 0;
  const auto n = bytes.size();
  while (i < n) {
    const auto b0 = static_cast<unsigned char>(bytes[i]);
    char32_t cp;
    std::size_t len;
    if (b0 < 0x80) {
      cp = b0;
      len = 1;
    } else if ((b0 & 0xE0) == 0xC0) {
      cp = b0 & 0x1F;
      len = 2;
    } else if ((b0 & 0xF0) == 0xE0) {
      cp = b0 & 0x0F;
      len = 3;
    } else if ((b0 & 0xF8) == 0xF0) {
      cp = b0 & 0x07;
      len = 4;
    } else {
      return std::nullopt;
    }
    if (i + len > n) return std::nullopt;
    for (std::size_t k = 1; k < len; ++k) {
      const auto b = static_cast<unsigned char>(bytes[i + k]);
      if ((b & 0xC0) != 0x80) return std::nullopt;
      cp = (cp << 6) | (b & 0x3F);
    }
    // Overlong encodings, surrogates, out-of-range.
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) ||
        (cp >= 0xD800 && cp <= 0xDFFF) || cp > 0x10FFFF)
      return std::nullopt;
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string encode_utf8(std::u32string_view text) {
  std::string out;
  out.reserve(text.size() * 3);
  for (char32_t cp : text) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }
  return out;
}

bool is_mkhedruli(char32_t cp) { return cp >= 0x10D0 && cp <= 0x10FF; }

bool is_unicode_space(char32_t cp) {
  switch (cp) {
    case U' ':
    case U'\t':
    case U'\n':
    case U'\r':
    case U'\f':
    case U'\v':
    case 0x85:
    case 0xA0:
    case 0x1680:
    case 0x2028:
    case 0x2029:
    case 0x202F:
    case 0x205F:
    case 0x3000:
    case 0xFEFF:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200B;
  }
}

bool is_strippable(char32_t cp) {
  if (cp < 0x80) {
    return (cp >= U'!' && cp <= U'/') || (cp >= U'0' && cp <= U'9') ||
           (cp >= U':' && cp <= U'@') || (cp >= U'[' && cp <= U'`') || (cp >= U'{' && cp <= U'~');
  }
  switch (cp) {
    case 0xA1:  // ¡
    case 0xA7:  // §
    case 0xAB:  // «
    case 0xB0:  // °
    case 0xB6:  // ¶
    case 0xB7:  // ·
    case 0xBB:  // »
    case 0xBF:  // ¿
    case 0x10FB:  // Georgian paragraph separator
    case 0x2039:
    case 0x203A:
    case 0x2116:  // №
      return true;
    default:
      // General punctuation: dashes, quotes, bullets, ellipsis, primes.
      return (cp >= 0x2010 && cp <= 0x2027) || (cp >= 0x2030 && cp <= 0x205E);
  }
}

// ---------------------------------------------------------------------------
// Homonym spec

bool HomonymSpec::matches(std::string_view token) const {
  return std::find(surface_forms.begin(), surface_forms.end(), token) != surface_forms.end();
}

void HomonymSpec::validate() const {
  if (lemma.empty()) throw InvalidArgument("homonym spec: missing lemma");
  if (surface_forms.empty()) throw InvalidArgument("homonym spec: no surface forms");
  if (!matches(lemma))
    throw InvalidArgument("homonym spec: lemma '" + lemma + "' is not among the forms");
  if (senses.empty()) throw InvalidArgument("homonym spec: empty sense inventory");
  for (std::size_t i = 0; i < senses.size(); ++i) {
    if (senses[i].id != static_cast<int>(i))
      throw InvalidArgument("homonym spec: sense ids must be contiguous from 0");
  }
  for (std::size_t i = 0; i < senses.size(); ++i)
    for (std::size_t j = i + 1; j < senses.size(); ++j)
      if (senses[i].synonym == senses[j].synonym)
        throw InvalidArgument("homonym spec: senses " + std::to_string(i) + " and " +
                              std::to_string(j) + " share the synonym '" + senses[i].synonym +
                              "'");
}

HomonymSpec parse_homonym_spec(std::istream& in) {
  HomonymSpec spec;
  std::map<int, Sense> senses;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto line = trim_ascii(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_ascii_ws(line);
    const auto key = fields.front();
    auto fail = [&](const std::string& what) -> void {
      throw FormatError("homonym spec line " + std::to_string(lineno) + ": " + what);
    };
    if (key == "lemma") {
      if (fields.size() != 2) fail("expected 'lemma <word>'");
      if (!spec.lemma.empty()) fail("duplicate lemma");
      spec.lemma = std::string(fields[1]);
    } else if (key == "form") {
      if (fields.size() != 2) fail("expected 'form <word>'");
      std::string form(fields[1]);
      if (!spec.matches(form)) spec.surface_forms.push_back(std::move(form));
    } else if (key == "sense") {
      if (fields.size() != 4) fail("expected 'sense <id> <gloss> <synonym>'");
      int id = -1;
      const auto idv = fields[1];
      const auto [ptr, ec] = std::from_chars(idv.data(), idv.data() + idv.size(), id);
      if (ec != std::errc{} || ptr != idv.data() + idv.size() || id < 0)
        fail("invalid sense id '" + std::string(idv) + "'");
      if (senses.contains(id)) fail("duplicate sense id " + std::to_string(id));
      senses[id] = Sense{id, std::string(fields[2]), std::string(fields[3])};
    } else {
      fail("unknown key '" + std::string(key) + "'");
    }
  }
  // The lemma always counts as a surface form.
  if (!spec.lemma.empty() && !spec.matches(spec.lemma))
    spec.surface_forms.insert(spec.surface_forms.begin(), spec.lemma);
  for (auto& [id, sense] : senses) spec.senses.push_back(std::move(sense));
  try {
    spec.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(e.what());
  }
  return spec;
}

HomonymSpec load_homonym_spec(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_homonym_spec(in);
}

void SplitSpec::validate() const {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw InvalidArgument("test fraction must lie in (0, 1)");
  if (!(validation_fraction_of_train >= 0.0 && validation_fraction_of_train < 1.0))
    throw InvalidArgument("validation fraction must lie in [0, 1)");
}

// ---------------------------------------------------------------------------
// Text operations

std::optional<std::string> filter_georgian_line(std::string_view line) {
  const auto decoded = decode_utf8(line);
  if (!decoded) return std::nullopt;
  const std::u32string_view text(*decoded);

  std::size_t kept_words = 0;
  for (const auto word : split_words(text)) {
    const auto core = strip_view(word);
    if (core.empty()) continue;
    if (!std::all_of(core.begin(), core.end(), is_mkhedruli)) return std::nullopt;
    ++kept_words;
  }
  if (kept_words == 0) return std::nullopt;

  std::size_t b = 0;
  std::size_t e = text.size();
  while (b < e && is_unicode_space(text[b])) ++b;
  while (e > b && is_unicode_space(text[e - 1])) --e;
  return encode_utf8(text.substr(b, e - b));
}

std::string strip_token(std::string_view token) {
  const auto decoded = decode_utf8(token);
  if (!decoded) return {};
  return encode_utf8(strip_view(*decoded));
}

std::vector<Sentence> segment_and_tokenize(std::string_view text,
                                           const TokenizerOptions& options) {
  std::vector<Sentence> sentences;
  const auto decoded = decode_utf8(text);
  if (!decoded) return sentences;

  Sentence current;
  std::u32string word;
  auto flush_word = [&] {
    const auto core = strip_view(word);
    if (!core.empty()) current.push_back(encode_utf8(core));
    word.clear();
  };
  auto flush_sentence = [&] {
    flush_word();
    if (!current.empty()) sentences.push_back(std::move(current));
    current.clear();
  };
  const auto& terms = options.terminators;
  for (char32_t cp : *decoded) {
    if (std::find(terms.begin(), terms.end(), cp) != terms.end()) {
      flush_sentence();
    } else if (is_unicode_space(cp)) {
      flush_word();
    } else {
      word.push_back(cp);
    }
  }
  flush_sentence();
  return sentences;
}

std::vector<SentenceWindow> extract_windows(std::span<const Token> sentence,
                                            const HomonymSpec& spec,
                                            std::string_view source_id) {
  std::vector<SentenceWindow> windows;
  for (std::size_t p = 0; p < sentence.size(); ++p) {
    if (!spec.matches(sentence[p])) continue;
    const std::size_t begin = p >= kContextRadius ? p - kContextRadius : 0;
    const std::size_t end = std::min(sentence.size(), p + kContextRadius + 1);
    SentenceWindow w;
    w.tokens.assign(sentence.begin() + static_cast<std::ptrdiff_t>(begin),
                    sentence.begin() + static_cast<std::ptrdiff_t>(end));
    w.target_index = p - begin;
    w.source_id = std::string(source_id);
    windows.push_back(std::move(w));
  }
  return windows;
}

// ---------------------------------------------------------------------------
// Pipelines

PipelineStats run_filter_pipeline(std::span<const std::filesystem::path> inputs,
                                  const std::filesystem::path& output, bool raw_lines,
                                  const TokenizerOptions& options) {
  PipelineStats stats;
  auto out = open_output(output);
  std::string line;
  for (const auto& path : inputs) {
    auto in = open_input(path);
    while (std::getline(in, line)) {
      ++stats.lines_read;
      if (!decode_utf8(line)) {
        ++stats.lines_invalid_utf8;
        continue;
      }
      const auto cleaned = filter_georgian_line(line);
      if (!cleaned) continue;
      ++stats.lines_kept;
      if (raw_lines) {
        out << *cleaned << '\n';
        ++stats.records_written;
        continue;
      }
      for (const auto& sentence : segment_and_tokenize(*cleaned, options)) {
        ++stats.sentences;
        out << join_tokens(sentence) << '\n';
        ++stats.records_written;
      }
    }
    if (in.bad()) throw IoError("read failed: " + path.string());
  }
  finish_output(out, output);
  return stats;
}

std::uint64_t run_extraction_pipeline(std::span<const std::filesystem::path> inputs,
                                      const HomonymSpec& spec,
                                      const std::filesystem::path& output,
                                      const TokenizerOptions& options, PipelineStats* stats) {
  PipelineStats local;
  auto out = open_output(output);
  out << kDatasetHeader << '\n';
  std::string line;
  for (const auto& path : inputs) {
    auto in = open_input(path);
    std::uint64_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      ++local.lines_read;
      if (!decode_utf8(line)) {
        ++local.lines_invalid_utf8;
        continue;
      }
      const auto cleaned = filter_georgian_line(line);
      if (!cleaned) continue;
      ++local.lines_kept;
      const auto source = path.filename().string() + ":" + std::to_string(lineno);
      for (const auto& sentence : segment_and_tokenize(*cleaned, options)) {
        ++local.sentences;
        for (auto& window : extract_windows(sentence, spec, source)) {
          write_record(out, LabeledExample{std::move(window), SenseLabel{}});
          ++local.records_written;
        }
      }
    }
    if (in.bad()) throw IoError("read failed: " + path.string());
  }
  finish_output(out, output);
  if (stats) *stats = local;
  return local.records_written;
}

// ---------------------------------------------------------------------------
// Dataset files

void write_dataset(std::ostream& out, std::span<const LabeledExample> examples) {
  out << kDatasetHeader << '\n';
  for (const auto& ex : examples) write_record(out, ex);
}

void write_dataset(const std::filesystem::path& path, std::span<const LabeledExample> examples) {
  auto out = open_output(path);
  write_dataset(out, examples);
  finish_output(out, path);
}

std::vector<LabeledExample> parse_labeled_dataset(std::istream& in, const HomonymSpec& spec,
                                                  std::string_view source_name) {
  std::vector<LabeledExample> examples;
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line))
    throw FormatError(std::string(source_name) + ": empty file, missing header");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kDatasetHeader)
    record_error(source_name, lineno, "header",
                 "expected '" + std::string(kDatasetHeader) + "', found '" + line + "'");

  const int num_senses = static_cast<int>(spec.sense_count());
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    const std::string_view view(line);
    const auto t1 = view.find('\t');
    const auto t2 = t1 == std::string_view::npos ? t1 : view.find('\t', t1 + 1);
    if (t2 == std::string_view::npos)
      record_error(source_name, lineno, "record", "expected 3 tab-separated fields");
    const auto label_field = view.substr(0, t1);
    const auto index_field = view.substr(t1 + 1, t2 - t1 - 1);
    const auto tokens_field = view.substr(t2 + 1);
    if (tokens_field.find('\t') != std::string_view::npos)
      record_error(source_name, lineno, "record", "too many fields");

    LabeledExample ex;
    if (label_field == "-") {
      ex.label = SenseLabel{};
    } else {
      int value = 0;
      const auto [ptr, ec] =
          std::from_chars(label_field.data(), label_field.data() + label_field.size(), value);
      if (ec != std::errc{} || ptr != label_field.data() + label_field.size())
        record_error(source_name, lineno, "label",
                     "not an integer: '" + std::string(label_field) + "'");
      if (value < 0 || value >= num_senses)
        record_error(source_name, lineno, "label",
                     "value " + std::to_string(value) + " outside 0.." +
                         std::to_string(num_senses - 1) + " or '-'");
      ex.label.value = value;
    }

    std::size_t index = 0;
    {
      const auto [ptr, ec] =
          std::from_chars(index_field.data(), index_field.data() + index_field.size(), index);
      if (ec != std::errc{} || ptr != index_field.data() + index_field.size() ||
          index_field.empty())
        record_error(source_name, lineno, "target_index",
                     "not a non-negative integer: '" + std::string(index_field) + "'");
    }

    for (const auto tok : split_ascii_ws(tokens_field)) ex.window.tokens.emplace_back(tok);
    if (ex.window.tokens.empty()) record_error(source_name, lineno, "tokens", "empty window");
    if (ex.window.tokens.size() > kWindowLength)
      record_error(source_name, lineno, "tokens",
                   std::to_string(ex.window.tokens.size()) + " tokens exceeds the limit of " +
                       std::to_string(kWindowLength));
    if (index >= ex.window.tokens.size())
      record_error(source_name, lineno, "target_index",
                   std::to_string(index) + " out of range for " +
                       std::to_string(ex.window.tokens.size()) + " tokens");
    ex.window.target_index = index;
    if (!spec.matches(ex.window.tokens[index]))
      record_error(source_name, lineno, "target_index",
                   "token '" + ex.window.tokens[index] + "' is not a form of '" + spec.lemma +
                       "'");
    ex.window.source_id = std::string(source_name) + ":" + std::to_string(lineno);
    examples.push_back(std::move(ex));
  }
  if (in.bad()) throw IoError(std::string(source_name) + ": read failed");
  return examples;
}

std::vector<LabeledExample> load_labeled_dataset(const std::filesystem::path& path,
                                                 const HomonymSpec& spec) {
  auto in = open_input(path);
  return parse_labeled_dataset(in, spec, path.filename().string());
}

std::vector<LabeledExample> drop_other(std::span<const LabeledExample> examples) {
  std::vector<LabeledExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples)
    if (!ex.label.is_other()) out.push_back(ex);
  return out;
}

std::size_t held_out_count(std::size_t count, double fraction) {
  // The epsilon absorbs representation error so that e.g. 2.5 rounds up.
  const double exact = static_cast<double>(count) * fraction;
  const auto n = static_cast<std::size_t>(std::floor(exact + 0.5 + 1e-9));
  return std::min(n, count);
}

std::vector<std::size_t> class_counts(std::span<const LabeledExample> examples,
                                      std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (const auto& ex : examples) {
    if (ex.label.is_other()) continue;
    const auto c = static_cast<std::size_t>(ex.label.value);
    if (c >= num_classes)
      throw InvalidArgument("label " + std::to_string(c) + " outside 0.." +
                            std::to_string(num_classes - 1));
    ++counts[c];
  }
  return counts;
}

DatasetSplit stratified_split(std::span<const LabeledExample> examples, const SplitSpec& split,
                              std::size_t num_classes) {
  split.validate();
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    if (ex.label.is_other())
      throw InvalidArgument("stratified_split: OTHER-labelled example at index " +
                            std::to_string(i) + " must be dropped first");
    const auto c = static_cast<std::size_t>(ex.label.value);
    if (c >= num_classes)
      throw InvalidArgument("stratified_split: label " + std::to_string(c) + " out of range");
    by_class[c].push_back(i);
  }
  for (std::size_t c = 0; c < num_classes; ++c)
    if (by_class[c].empty())
      throw InvalidArgument("stratified_split: class " + std::to_string(c) + " has no examples");

  enum Part : std::uint8_t { kTrain, kValidation, kTest };
  std::vector<Part> assignment(examples.size(), kTrain);
  Rng rng(split.seed);
  auto assign = [&](std::vector<std::size_t>& members) {
    rng.shuffle(std::span(members));
    const auto n_test = held_out_count(members.size(), split.test_fraction);
    const auto n_val = held_out_count(members.size() - n_test, split.validation_fraction_of_train);
    for (std::size_t k = 0; k < members.size(); ++k)
      assignment[members[k]] = k < n_test ? kTest : (k < n_test + n_val ? kValidation : kTrain);
  };
  if (split.stratified) {
    for (auto& members : by_class) assign(members);
  } else {
    std::vector<std::size_t> all(examples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    assign(all);
  }

  DatasetSplit out;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    switch (assignment[i]) {
      case kTrain: out.train.push_back(examples[i]); break;
      case kValidation: out.validation.push_back(examples[i]); break;
      case kTest: out.test.push_back(examples[i]); break;
    }
  }
  return out;
}

std::uint64_t dataset_fingerprint(std::span<const LabeledExample> examples) {
  std::ostringstream buf;
  for (const auto& ex : examples) write_record(buf, ex);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : buf.str()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace wsd
