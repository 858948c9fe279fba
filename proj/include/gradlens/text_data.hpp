#pragma once

// Corpus ingestion, tokenization, vocabulary, and the two input encodings:
// binary bag-of-words vectors and fixed-length index sequences.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gradlens/error.hpp"
#include "gradlens/random.hpp"

namespace gradlens::text {

struct LabeledExample {
  std::string text;
  int label = 0;  // 0 = negative, 1 = positive

  friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

namespace detail {

inline bool is_word_byte(unsigned char c) {
  // Bytes >= 0x80 belong to multi-byte UTF-8 sequences and are kept inside
  // words so accented letters do not split a token.
  return std::isalnum(c) != 0 || c >= 0x80;
}

// Removes <br>, <br/>, <br /> in any letter case.
inline std::string strip_line_breaks(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '<' && i + 3 <= text.size() &&
        std::tolower(static_cast<unsigned char>(text[i + 1])) == 'b' &&
        std::tolower(static_cast<unsigned char>(text[i + 2])) == 'r') {
      std::size_t j = i + 3;
      while (j < text.size() && text[j] == ' ') ++j;
      if (j < text.size() && text[j] == '/') ++j;
      if (j < text.size() && text[j] == '>') {
        out.push_back(' ');
        i = j + 1;
        continue;
      }
    }
    out.push_back(text[i]);
    ++i;
  }
  return out;
}

// Replaces every malformed UTF-8 sequence with U+FFFD.
inline std::string sanitize_utf8(std::string_view in) {
  static constexpr std::string_view kReplacement = "\xEF\xBF\xBD";
  std::string out;
  out.reserve(in.size());
  std::size_t i = 0;
  while (i < in.size()) {
    const auto c = static_cast<unsigned char>(in[i]);
    std::size_t len = 0;
    std::uint32_t min_cp = 0;
    if (c < 0x80) {
      out.push_back(static_cast<char>(c));
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      min_cp = 0x80;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      min_cp = 0x800;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      min_cp = 0x10000;
    }
    bool ok = len != 0 && i + len <= in.size();
    std::uint32_t cp = len ? (c & (0x7F >> len)) : 0;
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto cc = static_cast<unsigned char>(in[i + k]);
      if ((cc & 0xC0) != 0x80) {
        ok = false;
      } else {
        cp = (cp << 6) | (cc & 0x3F);
      }
    }
    ok = ok && cp >= min_cp && cp <= 0x10FFFF && !(cp >= 0xD800 && cp <= 0xDFFF);
    if (ok) {
      out.append(in.substr(i, len));
      i += len;
    } else {
      out.append(kReplacement);
      ++i;
    }
  }
  return out;
}

}  // namespace detail

// Lowercased word tokens. Line-break markup is removed first, then the text
// is split on every run of non-alphanumeric ASCII characters.
inline std::vector<std::string> tokenize(std::string_view text) {
  const std::string cleaned = detail::strip_line_breaks(text);
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : cleaned) {
    const auto c = static_cast<unsigned char>(ch);
    if (detail::is_word_byte(c)) {
      current.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnknown = 1;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnknownToken = "<unk>";

  Vocabulary() : words_{std::string(kPadToken), std::string(kUnknownToken)} {}

  // Appends corpus words after the two reserved slots, in the given order.
  static Vocabulary from_words(const std::vector<std::string>& words) {
    Vocabulary v;
    for (const auto& w : words) {
      if (w.empty() || w == kPadToken || w == kUnknownToken) {
        throw DataError("vocabulary word '" + w + "' is reserved or empty");
      }
      if (!v.index_.emplace(w, v.words_.size()).second) {
        throw DataError("duplicate vocabulary word '" + w + "'");
      }
      v.words_.push_back(w);
    }
    return v;
  }

  std::size_t size() const { return words_.size(); }

  // Unknown words map to kUnknown.
  std::size_t index_of(std::string_view word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnknown : it->second;
  }

  bool contains(std::string_view word) const {
    return index_.find(word) != index_.end();
  }

  const std::string& word_of(std::size_t index) const {
    if (index >= words_.size()) {
      throw IndexError("vocabulary index " + std::to_string(index) +
                       " out of range for size " + std::to_string(size()));
    }
    return words_[index];
  }

  const std::vector<std::string>& words() const { return words_; }

  // One word per line; lines 0 and 1 hold the reserved tokens.
  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary file " + path.string());
    for (const auto& w : words_) out << w << '\n';
    if (!out) throw DataError("failed writing vocabulary file " + path.string());
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read vocabulary file " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    if (lines.size() < 2 || lines[0] != kPadToken || lines[1] != kUnknownToken) {
      throw CorruptFileError("vocabulary file " + path.string() +
                             " lacks the reserved <pad>/<unk> header lines");
    }
    lines.erase(lines.begin(), lines.begin() + 2);
    return from_words(lines);
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.words_ == b.words_;
  }

 private:
  std::vector<std::string> words_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// Keeps the (capacity - 2) most frequent tokens; equal counts are ordered
// lexicographically.
inline Vocabulary build_vocabulary(const std::vector<LabeledExample>& corpus,
                                   std::size_t capacity) {
  if (capacity < 3) {
    throw ConfigError("vocabulary capacity must be at least 3, got " +
                      std::to_string(capacity));
  }
  if (corpus.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& ex : corpus) {
    for (auto& tok : tokenize(ex.text)) ++counts[std::move(tok)];
  }
  counts.erase(std::string(Vocabulary::kPadToken));
  counts.erase(std::string(Vocabulary::kUnknownToken));
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(),
                                                          counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const std::size_t keep = std::min(ranked.size(), capacity - 2);
  std::vector<std::string> words;
  words.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) words.push_back(std::move(ranked[i].first));
  return Vocabulary::from_words(words);
}

// Sparse view of a binary presence vector: the sorted set of active slots.
struct BowVector {
  std::size_t dimension = 0;
  std::vector<std::size_t> active;

  bool test(std::size_t d) const {
    return std::binary_search(active.begin(), active.end(), d);
  }

  std::vector<double> dense() const {
    std::vector<double> x(dimension, 0.0);
    for (std::size_t d : active) x[d] = 1.0;
    return x;
  }

  friend bool operator==(const BowVector&, const BowVector&) = default;
};

inline BowVector encode_bow(const std::vector<std::string>& tokens,
                            const Vocabulary& vocab) {
  BowVector bow;
  bow.dimension = vocab.size();
  for (const auto& t : tokens) bow.active.push_back(vocab.index_of(t));
  std::sort(bow.active.begin(), bow.active.end());
  bow.active.erase(std::unique(bow.active.begin(), bow.active.end()),
                   bow.active.end());
  return bow;
}

struct TokenSequence {
  std::vector<std::size_t> ids;
  std::size_t effective_length = 0;  // non-pad positions, all at the end

  std::size_t length() const { return ids.size(); }
  std::size_t first_token() const { return ids.size() - effective_length; }

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

// Keeps the last `length` tokens and left-pads shorter inputs.
inline TokenSequence encode_sequence(const std::vector<std::string>& tokens,
                                     const Vocabulary& vocab,
                                     std::size_t length = 400) {
  if (length == 0) throw ConfigError("sequence length must be at least 1");
  TokenSequence seq;
  seq.ids.assign(length, Vocabulary::kPad);
  const std::size_t kept = std::min(tokens.size(), length);
  const std::size_t skip = tokens.size() - kept;
  for (std::size_t k = 0; k < kept; ++k) {
    seq.ids[length - kept + k] = vocab.index_of(tokens[skip + k]);
  }
  seq.effective_length = kept;
  return seq;
}

struct ImdbSplits {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> test;
};

namespace detail {

inline std::vector<LabeledExample> load_labeled_dir(
    const std::filesystem::path& dir, int label) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) {
    throw DataError("missing directory " + dir.string());
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    return a.filename().string() < b.filename().string();
  });
  std::vector<LabeledExample> out;
  out.reserve(files.size());
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    if (!in) throw DataError("unreadable file " + f.string());
    std::string raw((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    if (in.bad()) throw DataError("unreadable file " + f.string());
    out.push_back({sanitize_utf8(raw), label});
  }
  return out;
}

inline std::vector<LabeledExample> load_split(const std::filesystem::path& dir) {
  auto examples = load_labeled_dir(dir / "neg", 0);
  auto pos = load_labeled_dir(dir / "pos", 1);
  examples.insert(examples.end(), std::make_move_iterator(pos.begin()),
                  std::make_move_iterator(pos.end()));
  return examples;
}

}  // namespace detail

// Reads root/{train,test}/{neg,pos}/*.txt. Within a split, negatives come
// first, each class in file-name order.
inline ImdbSplits load_imdb(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) {
    throw DataError("missing directory " + root.string());
  }
  return {detail::load_split(root / "train"), detail::load_split(root / "test")};
}

struct SyntheticConfig {
  std::uint64_t seed = 42;
  std::size_t examples = 1000;
  std::size_t positive_words = 10;
  std::size_t negative_words = 10;
  std::size_t vocabulary_size = 200;  // planted plus filler words
  std::size_t min_length = 20;
  std::size_t max_length = 40;
  std::size_t min_planted = 1;  // planted occurrences per example
  std::size_t max_planted = 3;
};

struct SyntheticCorpus {
  std::vector<LabeledExample> examples;
  std::vector<std::string> positive_words;
  std::vector<std::string> negative_words;
};

// Filler text with planted sentiment words. An example is positive iff its
// positive planted occurrences outnumber its negative ones; balanced draws are
// discarded and redrawn.
inline SyntheticCorpus generate_synthetic_corpus(const SyntheticConfig& cfg) {
  const std::size_t planted = cfg.positive_words + cfg.negative_words;
  if (cfg.positive_words == 0 || cfg.negative_words == 0 || cfg.examples == 0 ||
      cfg.vocabulary_size <= planted || cfg.min_planted == 0 ||
      cfg.min_planted > cfg.max_planted || cfg.min_length > cfg.max_length ||
      cfg.max_planted > cfg.min_length) {
    throw ConfigError("infeasible synthetic corpus parameters");
  }
  auto name = [](std::string_view prefix, std::size_t i) {
    std::ostringstream s;
    s << prefix << (i < 10 ? "0" : "") << i;
    return s.str();
  };
  SyntheticCorpus corpus;
  for (std::size_t i = 0; i < cfg.positive_words; ++i) {
    corpus.positive_words.push_back(name("pos", i));
  }
  for (std::size_t i = 0; i < cfg.negative_words; ++i) {
    corpus.negative_words.push_back(name("neg", i));
  }
  std::vector<std::string> filler;
  for (std::size_t i = 0; i < cfg.vocabulary_size - planted; ++i) {
    filler.push_back(name("w", i));
  }

  Rng rng(cfg.seed);
  corpus.examples.reserve(cfg.examples);
  while (corpus.examples.size() < cfg.examples) {
    const std::size_t n_planted = rng.between(cfg.min_planted, cfg.max_planted);
    const std::size_t length = rng.between(cfg.min_length, cfg.max_length);
    std::vector<std::string> words;
    std::size_t pos = 0;
    std::size_t neg = 0;
    for (std::size_t k = 0; k < n_planted; ++k) {
      if (rng.below(2) == 0) {
        words.push_back(corpus.positive_words[rng.below(cfg.positive_words)]);
        ++pos;
      } else {
        words.push_back(corpus.negative_words[rng.below(cfg.negative_words)]);
        ++neg;
      }
    }
    if (pos == neg) continue;
    while (words.size() < length) words.push_back(filler[rng.below(filler.size())]);
    rng.shuffle(std::span<std::string>(words));
    std::string text;
    for (std::size_t k = 0; k < words.size(); ++k) {
      if (k) text.push_back(' ');
      text += words[k];
    }
    corpus.examples.push_back({std::move(text), pos > neg ? 1 : 0});
  }
  return corpus;
}

}  // namespace gradlens::text
