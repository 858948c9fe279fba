#pragma once

// Input-gradient interpretation of trained classifiers.
//
// Local gradients are taken of the model's score with respect to its input:
// the real-valued relaxation of binary bag-of-words features, or the embedded
// token matrix of the convolutional model. Per-token saliency is the l2 norm
// of each embedding-gradient row. The global gradient is the signed mean of
// local gradients over a test set; its sign against a feature vector gives a
// linear surrogate classifier.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gradlens/autodiff.hpp"
#include "gradlens/error.hpp"
#include "gradlens/models.hpp"
#include "gradlens/tensor.hpp"
#include "gradlens/text_data.hpp"

namespace gradlens::attribution {

using models::EncodedExample;
using models::TrainedModel;

enum class ScoreKind { kLogit, kProbability };

inline std::string_view score_kind_name(ScoreKind kind) {
  return kind == ScoreKind::kLogit ? "logit" : "probability";
}

inline ScoreKind parse_score_kind(std::string_view name) {
  if (name == "logit") return ScoreKind::kLogit;
  if (name == "probability") return ScoreKind::kProbability;
  throw ConfigError("unknown score kind '" + std::string(name) +
                    "' (expected logit or probability)");
}

// d(score)/d(input). Bow models: shape [features]. Text-cnn: [length, dim],
// one row per token position.
struct LocalGradient {
  Shape shape;
  std::vector<double> values;
  ScoreKind kind = ScoreKind::kLogit;

  std::span<const double> row(std::size_t position) const {
    const std::size_t width = shape.back();
    return std::span<const double>(values).subspan(position * width, width);
  }
};

namespace detail {

inline autodiff::Var apply_kind(autodiff::Tape& tape, autodiff::Var score, ScoreKind kind) {
  return kind == ScoreKind::kProbability ? tape.sigmoid(score) : score;
}

}  // namespace detail

inline LocalGradient local_gradient(const TrainedModel& model, const EncodedExample& input,
                                    ScoreKind kind = ScoreKind::kLogit) {
  models::check_input(model, input);
  autodiff::Tape tape;
  auto p = models::bind_parameters(tape, model, false);
  LocalGradient out;
  out.kind = kind;
  if (model.is_cnn()) {
    const auto& seq = std::get<text::TokenSequence>(input);
    auto embedded = tape.gather(p.vars[0], seq.ids);
    tape.watch(embedded);
    auto trace = models::cnn_forward_from_embedding(tape, model, p, embedded);
    auto grads = tape.backward(detail::apply_kind(tape, trace.score, kind));
    const Tensor& g = grads.at(embedded);
    out.shape = g.shape();
    out.values = g.values();
    return out;
  }
  auto x = tape.input(Tensor::vector(std::get<text::BowVector>(input).dense()));
  auto trace = models::bow_forward(tape, model, p, x);
  auto grads = tape.backward(detail::apply_kind(tape, trace.score, kind));
  out.shape = {model.feature_size()};
  out.values = grads.at(x).values();
  return out;
}

// Gradient of a text-cnn score with respect to an arbitrary embedded input.
inline LocalGradient embedding_gradient(const TrainedModel& model, const Tensor& embedded,
                                        ScoreKind kind = ScoreKind::kLogit) {
  autodiff::Tape tape;
  auto p = models::bind_parameters(tape, model, false);
  auto z = tape.input(embedded);
  auto trace = models::cnn_forward_from_embedding(tape, model, p, z);
  auto grads = tape.backward(detail::apply_kind(tape, trace.score, kind));
  return {embedded.shape(), grads.at(z).values(), kind};
}

// Gradient of a bow model's score at a real-valued feature vector.
inline LocalGradient feature_gradient(const TrainedModel& model, std::span<const double> x,
                                      ScoreKind kind = ScoreKind::kLogit) {
  if (x.size() != model.feature_size()) {
    throw ShapeError("model expects " + std::to_string(model.feature_size()) +
                     " features, got " + std::to_string(x.size()));
  }
  autodiff::Tape tape;
  auto p = models::bind_parameters(tape, model, false);
  auto in = tape.input(Tensor::vector(std::vector<double>(x.begin(), x.end())));
  auto trace = models::bow_forward(tape, model, p, in);
  auto grads = tape.backward(detail::apply_kind(tape, trace.score, kind));
  return {{x.size()}, grads.at(in).values(), kind};
}

// Score of the selected kind, usable as a black box.
inline double score(const TrainedModel& model, std::span<const double> features,
                    ScoreKind kind = ScoreKind::kLogit) {
  const double s = models::score_features(model, features);
  return kind == ScoreKind::kProbability ? autodiff::sigmoid(s) : s;
}

inline double score_embedded(const TrainedModel& model, const Tensor& embedded,
                             ScoreKind kind = ScoreKind::kLogit) {
  const double s = models::score_embedding(model, embedded);
  return kind == ScoreKind::kProbability ? autodiff::sigmoid(s) : s;
}

struct TokenSaliency {
  std::size_t position = 0;
  std::string token;
  double norm = 0.0;
  std::size_t rank = 0;  // 1-based
};

inline std::vector<std::string> position_tokens(const text::TokenSequence& seq,
                                                const text::Vocabulary* vocab) {
  std::vector<std::string> out;
  out.reserve(seq.length());
  for (std::size_t id : seq.ids) {
    out.push_back(vocab ? vocab->word_of(id) : std::to_string(id));
  }
  return out;
}

// Ranks non-pad positions by the l2 norm of their gradient rows, descending;
// equal norms keep the lower position first.
inline std::vector<TokenSaliency> rank_tokens(const LocalGradient& grad,
                                              const text::TokenSequence& seq,
                                              const text::Vocabulary* vocab = nullptr) {
  if (grad.shape.size() != 2 || grad.shape[0] != seq.length()) {
    throw ShapeError("gradient " + shape_string(grad.shape) +
                     " does not match a sequence of length " +
                     std::to_string(seq.length()));
  }
  if (seq.effective_length == 0) {
    throw DataError("cannot rank tokens of an all-pad sequence");
  }
  std::vector<TokenSaliency> out;
  for (std::size_t pos = seq.first_token(); pos < seq.length(); ++pos) {
    double sq = 0.0;
    for (double v : grad.row(pos)) sq += v * v;
    out.push_back({pos, vocab ? vocab->word_of(seq.ids[pos]) : std::to_string(seq.ids[pos]),
                   std::sqrt(sq), 0});
  }
  std::stable_sort(out.begin(), out.end(), [](const TokenSaliency& a, const TokenSaliency& b) {
    return a.norm > b.norm;
  });
  for (std::size_t i = 0; i < out.size(); ++i) out[i].rank = i + 1;
  return out;
}

inline std::vector<TokenSaliency> token_saliency(const TrainedModel& model,
                                                 const text::TokenSequence& seq,
                                                 ScoreKind kind = ScoreKind::kLogit,
                                                 const text::Vocabulary* vocab = nullptr) {
  if (!model.is_cnn()) throw ShapeError("token saliency requires a text-cnn model");
  if (seq.effective_length == 0) {
    throw DataError("cannot rank tokens of an all-pad sequence");
  }
  if (!vocab) vocab = model.vocabulary.get();
  return rank_tokens(local_gradient(model, seq, kind), seq, vocab);
}

struct ExpressionWindow {
  std::size_t anchor = 0;
  std::vector<std::string> window;
  double norm = 0.0;
};

// The top-m anchors, each followed by the next (filter_width - 1) tokens: the
// span a convolution starting at the anchor reads. Windows stop at the end of
// the sequence and never include padding.
inline std::vector<ExpressionWindow> extract_expressions(
    std::span<const TokenSaliency> saliency, const std::vector<std::string>& tokens,
    std::size_t filter_width, std::size_t top_m = 4) {
  std::vector<ExpressionWindow> out;
  for (std::size_t i = 0; i < saliency.size() && out.size() < top_m; ++i) {
    const auto& s = saliency[i];
    ExpressionWindow w{s.position, {}, s.norm};
    for (std::size_t k = 0; k < filter_width && s.position + k < tokens.size(); ++k) {
      const auto& tok = tokens[s.position + k];
      if (tok == text::Vocabulary::kPadToken) break;
      w.window.push_back(tok);
    }
    out.push_back(std::move(w));
  }
  return out;
}

// Streaming pairwise summation. Partial sums of equal block size are merged
// as they appear, so the reduction tree depends only on example order.
class PairwiseSum {
 public:
  explicit PairwiseSum(std::size_t width) : width_(width) {}

  void add(std::span<const double> v) {
    if (v.size() != width_) {
      throw ShapeError("gradient of width " + std::to_string(v.size()) +
                       " added to a sum of width " + std::to_string(width_));
    }
    Partial p{1, std::vector<double>(v.begin(), v.end())};
    while (!stack_.empty() && stack_.back().count == p.count) {
      auto& left = stack_.back().values;
      for (std::size_t i = 0; i < width_; ++i) left[i] += p.values[i];
      p.values = std::move(left);
      p.count *= 2;
      stack_.pop_back();
    }
    stack_.push_back(std::move(p));
    ++count_;
  }

  std::size_t count() const { return count_; }

  std::vector<double> total() const {
    std::vector<double> acc(width_, 0.0);
    if (stack_.empty()) return acc;
    acc = stack_.back().values;
    for (std::size_t k = stack_.size() - 1; k-- > 0;) {
      const auto& left = stack_[k].values;
      for (std::size_t i = 0; i < width_; ++i) acc[i] = left[i] + acc[i];
    }
    return acc;
  }

  std::vector<double> mean() const {
    if (count_ == 0) throw DataError("mean of zero gradients");
    auto t = total();
    const double n = static_cast<double>(count_);
    for (double& v : t) v /= n;
    return t;
  }

 private:
  struct Partial {
    std::size_t count;
    std::vector<double> values;
  };
  std::size_t width_;
  std::size_t count_ = 0;
  std::vector<Partial> stack_;
};

struct GlobalGradient {
  std::vector<double> values;  // signed mean gradient per feature
  std::size_t sample_count = 0;
  ScoreKind kind = ScoreKind::kLogit;
};

inline GlobalGradient mean_of(std::span<const std::vector<double>> gradients,
                              ScoreKind kind = ScoreKind::kLogit) {
  if (gradients.empty()) throw DataError("cannot average an empty set of gradients");
  PairwiseSum sum(gradients.front().size());
  for (const auto& g : gradients) sum.add(g);
  return {sum.mean(), sum.count(), kind};
}

// Per-example input gradients of a bow model, computed in batches and handed
// to `sink(index, gradient)` in example order.
template <typename Sink>
void for_each_feature_gradient(const TrainedModel& model,
                               std::span<const EncodedExample> inputs, ScoreKind kind,
                               Sink&& sink, std::size_t batch = 64) {
  if (!model.is_bow()) throw ShapeError("feature gradients require a bag-of-words model");
  for (const auto& in : inputs) models::check_input(model, in);
  const std::size_t width = model.feature_size();
  for (std::size_t start = 0; start < inputs.size(); start += batch) {
    const std::size_t end = std::min(inputs.size(), start + batch);
    Tensor x({end - start, width});
    for (std::size_t r = start; r < end; ++r) {
      for (std::size_t d : std::get<text::BowVector>(inputs[r]).active) x.at(r - start, d) = 1.0;
    }
    autodiff::Tape tape;
    auto p = models::bind_parameters(tape, model, false);
    auto xv = tape.input(std::move(x));
    auto trace = models::bow_forward(tape, model, p, xv);
    // Examples do not interact, so the gradient of the summed scores holds
    // each example's own gradient in its row.
    auto total = tape.sum(detail::apply_kind(tape, trace.score, kind));
    auto grads = tape.backward(total);
    const Tensor& g = grads.at(xv);
    for (std::size_t r = start; r < end; ++r) sink(r, g.row(r - start));
  }
}

inline GlobalGradient mean_gradient(const TrainedModel& model,
                                    std::span<const EncodedExample> test_set,
                                    ScoreKind kind = ScoreKind::kLogit) {
  if (test_set.empty()) throw DataError("cannot average gradients over an empty test set");
  PairwiseSum sum(model.feature_size());
  for_each_feature_gradient(model, test_set, kind,
                            [&](std::size_t, std::span<const double> g) { sum.add(g); });
  return {sum.mean(), sum.count(), kind};
}

struct WordValue {
  std::string word;
  std::size_t index = 0;
  double value = 0.0;
};

struct WordRanking {
  std::vector<WordValue> positive;  // descending value
  std::vector<WordValue> negative;  // ascending value
};

// Reserved pad/unknown slots are never ranked. Lists are truncated when the
// vocabulary has fewer than top_n words.
inline WordRanking rank_global_words(const GlobalGradient& global,
                                     const text::Vocabulary& vocab, std::size_t top_n) {
  if (global.values.size() != vocab.size()) {
    throw ShapeError("global gradient of length " + std::to_string(global.values.size()) +
                     " does not match vocabulary of size " + std::to_string(vocab.size()));
  }
  std::vector<std::size_t> idx;
  for (std::size_t i = 2; i < vocab.size(); ++i) idx.push_back(i);
  const auto& g = global.values;
  auto take = [&](auto cmp) {
    std::vector<std::size_t> order = idx;
    std::stable_sort(order.begin(), order.end(), cmp);
    std::vector<WordValue> out;
    for (std::size_t k = 0; k < std::min(top_n, order.size()); ++k) {
      out.push_back({vocab.word_of(order[k]), order[k], g[order[k]]});
    }
    return out;
  };
  WordRanking r;
  r.positive = take([&](std::size_t a, std::size_t b) { return g[a] > g[b]; });
  r.negative = take([&](std::size_t a, std::size_t b) { return g[a] < g[b]; });
  return r;
}

struct SurrogateDecision {
  int label = 0;
  double inner_product = 0.0;
};

// 1 iff <global, x> > 0.
inline SurrogateDecision surrogate_predict(const GlobalGradient& global,
                                           std::span<const double> x) {
  if (x.size() != global.values.size()) {
    throw ShapeError("surrogate: feature vector of length " + std::to_string(x.size()) +
                     " vs global gradient of length " +
                     std::to_string(global.values.size()));
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) dot += global.values[i] * x[i];
  return {dot > 0.0 ? 1 : 0, dot};
}

inline SurrogateDecision surrogate_predict(const GlobalGradient& global,
                                           const text::BowVector& x) {
  if (x.dimension != global.values.size()) {
    throw ShapeError("surrogate: feature vector of length " + std::to_string(x.dimension) +
                     " vs global gradient of length " +
                     std::to_string(global.values.size()));
  }
  double dot = 0.0;
  for (std::size_t d : x.active) dot += global.values[d];
  return {dot > 0.0 ? 1 : 0, dot};
}

// Fraction of examples on which the surrogate and the model's thresholded
// prediction agree. True labels play no role.
inline double surrogate_agreement(const GlobalGradient& global, const TrainedModel& model,
                                  std::span<const EncodedExample> test_set) {
  if (test_set.empty()) throw DataError("cannot measure agreement on an empty test set");
  const auto preds = models::predict_all(
      model, std::vector<EncodedExample>(test_set.begin(), test_set.end()));
  std::size_t agree = 0;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    const auto& bow = std::get<text::BowVector>(test_set[i]);
    if (surrogate_predict(global, bow).label == preds[i].label()) ++agree;
  }
  return static_cast<double>(agree) / static_cast<double>(test_set.size());
}

enum class DifferenceMode { kForward, kCentral };

inline std::string_view difference_mode_name(DifferenceMode m) {
  return m == DifferenceMode::kForward ? "forward" : "central";
}

inline DifferenceMode parse_difference_mode(std::string_view name) {
  if (name == "forward") return DifferenceMode::kForward;
  if (name == "central") return DifferenceMode::kCentral;
  throw ConfigError("unknown difference mode '" + std::string(name) +
                    "' (expected forward or central)");
}

struct FiniteDifferenceResult {
  std::vector<double> gradient;
  std::size_t evaluations = 0;  // p + 1 forward, 2p central
};

// Numerical gradient of any scorer: forward (f(x + h e_k) - f(x)) / h with a
// shared baseline, or central (f(x + h e_k) - f(x - h e_k)) / 2h.
template <typename Scorer>
FiniteDifferenceResult finite_difference_gradient(Scorer&& scorer, std::span<const double> x,
                                                  double h,
                                                  DifferenceMode mode = DifferenceMode::kCentral) {
  if (!(h > 0.0) || !std::isfinite(h)) throw ConfigError("step h must be positive and finite");
  std::vector<double> point(x.begin(), x.end());
  FiniteDifferenceResult out;
  out.gradient.resize(point.size());
  auto eval = [&]() {
    const double v = scorer(std::span<const double>(point));
    ++out.evaluations;
    if (!std::isfinite(v)) throw NumericalError("scorer returned a non-finite value");
    return v;
  };
  const double base = mode == DifferenceMode::kForward ? eval() : 0.0;
  for (std::size_t k = 0; k < point.size(); ++k) {
    const double orig = point[k];
    point[k] = orig + h;
    const double up = eval();
    if (mode == DifferenceMode::kForward) {
      out.gradient[k] = (up - base) / h;
    } else {
      point[k] = orig - h;
      const double down = eval();
      out.gradient[k] = (up - down) / (2.0 * h);
    }
    point[k] = orig;
  }
  return out;
}

struct GradientDiscrepancy {
  double max_relative = 0.0;
  double mean_relative = 0.0;
};

// Relative error per coordinate is |a - b| / max(|a|, |b|, floor); the floor
// keeps coordinates whose gradient is essentially zero from dominating.
inline GradientDiscrepancy compare_gradients(std::span<const double> a,
                                             std::span<const double> b,
                                             double floor = 1e-6) {
  if (a.size() != b.size()) {
    throw ShapeError("cannot compare gradients of lengths " + std::to_string(a.size()) +
                     " and " + std::to_string(b.size()));
  }
  GradientDiscrepancy d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    const double rel = std::abs(a[i] - b[i]) / denom;
    d.max_relative = std::max(d.max_relative, rel);
    d.mean_relative += rel;
  }
  if (!a.empty()) d.mean_relative /= static_cast<double>(a.size());
  return d;
}

}  // namespace gradlens::attribution
