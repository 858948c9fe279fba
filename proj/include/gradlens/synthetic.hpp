#pragma once

// Fixed synthetic setups with known ground truth, shared by the CLI and the
// acceptance suite so both exercise exactly the same corpus and model shapes.

#include <cstdint>

#include "gradlens/models.hpp"
#include "gradlens/text_data.hpp"

namespace gradlens::synthetic {

// Bag-of-words corpus: 1-3 planted words per document in filler text.
inline text::SyntheticConfig bow_corpus(std::uint64_t seed = 42) {
  text::SyntheticConfig c;
  c.seed = seed;
  c.examples = 2000;
  c.vocabulary_size = 300;
  return c;
}

// Sequence corpus: exactly one planted trigger per sentence, which alone
// decides the label.
inline text::SyntheticConfig sequence_corpus(std::uint64_t seed = 42) {
  text::SyntheticConfig c;
  c.seed = seed;
  c.examples = 4000;
  c.vocabulary_size = 200;
  c.min_length = 10;
  c.max_length = 30;
  c.min_planted = 1;
  c.max_planted = 1;
  return c;
}

inline constexpr double kTrainFraction = 0.75;

// Three epochs fit the sequence corpus perfectly, but saliency only settles
// on the trigger once the loss is driven further down.
inline constexpr std::size_t kCnnEpochs = 5;
inline constexpr std::size_t kVocabularyCapacity = 1000;

// First 75% train, remainder test. The generator already randomizes order.
inline text::ImdbSplits split(const text::SyntheticCorpus& corpus) {
  const auto cut = static_cast<std::ptrdiff_t>(
      static_cast<double>(corpus.examples.size()) * kTrainFraction);
  return {{corpus.examples.begin(), corpus.examples.begin() + cut},
          {corpus.examples.begin() + cut, corpus.examples.end()}};
}

inline models::TextCnnConfig compact_cnn(std::size_t vocabulary_size) {
  return {32, vocabulary_size, 16, 32, 3};
}

}  // namespace gradlens::synthetic
