#pragma once

// The two classifiers (bag-of-words MLP, embedding + convolution network),
// a plain linear scorer over bag-of-words features, and their training loop.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "gradlens/autodiff.hpp"
#include "gradlens/error.hpp"
#include "gradlens/random.hpp"
#include "gradlens/tensor.hpp"
#include "gradlens/text_data.hpp"

namespace gradlens::models {

using autodiff::Tape;
using autodiff::Var;

struct BowMlpConfig {
  std::size_t input_size = 5000;
  std::vector<std::size_t> hidden_sizes{250, 50};

  friend bool operator==(const BowMlpConfig&, const BowMlpConfig&) = default;
};

struct TextCnnConfig {
  std::size_t sequence_length = 400;
  std::size_t vocabulary_size = 5000;
  std::size_t embedding_dim = 50;
  std::size_t filter_count = 250;
  std::size_t filter_width = 3;

  friend bool operator==(const TextCnnConfig&, const TextCnnConfig&) = default;
};

// score = weights . x + bias over bag-of-words features.
struct LinearConfig {
  std::size_t input_size = 0;

  friend bool operator==(const LinearConfig&, const LinearConfig&) = default;
};

using Architecture = std::variant<BowMlpConfig, TextCnnConfig, LinearConfig>;

inline std::string_view architecture_name(const Architecture& arch) {
  switch (arch.index()) {
    case 0: return "bow-mlp";
    case 1: return "text-cnn";
    default: return "linear";
  }
}

inline void validate(const BowMlpConfig& c) {
  if (c.input_size == 0) throw ConfigError("bow-mlp: input size must be positive");
  if (c.hidden_sizes.size() != 2) {
    throw ConfigError("bow-mlp: exactly two hidden layers required, got " +
                      std::to_string(c.hidden_sizes.size()));
  }
  for (std::size_t h : c.hidden_sizes) {
    if (h == 0) throw ConfigError("bow-mlp: hidden sizes must be positive");
  }
}

inline void validate(const TextCnnConfig& c) {
  if (c.sequence_length == 0 || c.vocabulary_size == 0 || c.embedding_dim == 0 ||
      c.filter_count == 0 || c.filter_width == 0) {
    throw ConfigError("text-cnn: all extents must be positive");
  }
  if (c.filter_width > c.sequence_length) {
    throw ConfigError("text-cnn: filter width " + std::to_string(c.filter_width) +
                      " exceeds sequence length " +
                      std::to_string(c.sequence_length));
  }
}

inline void validate(const LinearConfig& c) {
  if (c.input_size == 0) throw ConfigError("linear: input size must be positive");
}

inline void validate(const Architecture& arch) {
  std::visit([](const auto& c) { validate(c); }, arch);
}

inline std::size_t conv_output_length(const TextCnnConfig& c) {
  return c.sequence_length - c.filter_width + 1;
}

// Parameter order: bow-mlp {W1, b1, W2, b2, W3, b3};
// text-cnn {embedding, kernel, kernel bias, output W, output b};
// linear {W, b}. Weights are [fan_in, fan_out]; kernels [width, dim, filters].
inline std::vector<Shape> parameter_shapes(const Architecture& arch) {
  validate(arch);
  if (const auto* m = std::get_if<BowMlpConfig>(&arch)) {
    const std::size_t h1 = m->hidden_sizes[0];
    const std::size_t h2 = m->hidden_sizes[1];
    return {{m->input_size, h1}, {h1}, {h1, h2}, {h2}, {h2, 1}, {1}};
  }
  if (const auto* c = std::get_if<TextCnnConfig>(&arch)) {
    return {{c->vocabulary_size, c->embedding_dim},
            {c->filter_width, c->embedding_dim, c->filter_count},
            {c->filter_count},
            {c->filter_count, 1},
            {1}};
  }
  const auto& l = std::get<LinearConfig>(arch);
  return {{l.input_size, 1}, {1}};
}

struct TrainingMetadata {
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::vector<double> epoch_losses;
  double train_accuracy = std::numeric_limits<double>::quiet_NaN();
  double test_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct TrainedModel {
  Architecture architecture;
  std::vector<Tensor> parameters;
  std::shared_ptr<const text::Vocabulary> vocabulary;
  TrainingMetadata metadata;

  bool is_cnn() const { return std::holds_alternative<TextCnnConfig>(architecture); }
  bool is_bow() const { return !is_cnn(); }

  // Width of the bag-of-words feature vector (bow models only).
  std::size_t feature_size() const {
    if (const auto* m = std::get_if<BowMlpConfig>(&architecture)) return m->input_size;
    if (const auto* l = std::get_if<LinearConfig>(&architecture)) return l->input_size;
    throw ShapeError("text-cnn models take token sequences, not feature vectors");
  }

  const TextCnnConfig& cnn_config() const {
    const auto* c = std::get_if<TextCnnConfig>(&architecture);
    if (!c) throw ShapeError("model is not a text-cnn");
    return *c;
  }
};

inline std::size_t parameter_count(const TrainedModel& model) {
  std::size_t total = 0;
  for (const auto& p : model.parameters) total += p.size();
  return total;
}

inline void check_parameters(const TrainedModel& model) {
  const auto shapes = parameter_shapes(model.architecture);
  if (shapes.size() != model.parameters.size()) {
    throw ShapeError("model has " + std::to_string(model.parameters.size()) +
                     " parameter tensors, architecture expects " +
                     std::to_string(shapes.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (model.parameters[i].shape() != shapes[i]) {
      throw ShapeError("parameter " + std::to_string(i) + " has shape " +
                       shape_string(model.parameters[i].shape()) + ", expected " +
                       shape_string(shapes[i]));
    }
  }
}

namespace detail {

inline void glorot_fill(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.data()) v = rng.uniform(-limit, limit);
}

}  // namespace detail

inline TrainedModel build_bow_mlp(const BowMlpConfig& config, std::uint64_t seed) {
  TrainedModel model;
  model.architecture = config;
  for (const auto& s : parameter_shapes(model.architecture)) {
    model.parameters.emplace_back(s, 0.0);
  }
  Rng rng(seed);
  for (std::size_t i : {0u, 2u, 4u}) {
    auto& w = model.parameters[i];
    detail::glorot_fill(w, w.extent(0), w.extent(1), rng);
  }
  model.metadata.seed = seed;
  return model;
}

inline TrainedModel build_text_cnn(const TextCnnConfig& config, std::uint64_t seed) {
  TrainedModel model;
  model.architecture = config;
  for (const auto& s : parameter_shapes(model.architecture)) {
    model.parameters.emplace_back(s, 0.0);
  }
  Rng rng(seed);
  for (double& v : model.parameters[0].data()) v = rng.uniform(-0.05, 0.05);
  detail::glorot_fill(model.parameters[1], config.filter_width * config.embedding_dim,
                      config.filter_width * config.filter_count, rng);
  detail::glorot_fill(model.parameters[3], config.filter_count, 1, rng);
  model.metadata.seed = seed;
  return model;
}

inline TrainedModel build_linear(std::vector<double> weights, double bias = 0.0) {
  TrainedModel model;
  const std::size_t n = weights.size();
  model.architecture = LinearConfig{n};
  validate(model.architecture);
  model.parameters.emplace_back(Shape{n, 1}, std::move(weights));
  model.parameters.emplace_back(Shape{1}, std::vector<double>{bias});
  return model;
}

// Seeded Glorot initialization of a linear scorer, for training.
inline TrainedModel build_linear(const LinearConfig& config, std::uint64_t seed) {
  validate(config);
  TrainedModel model;
  model.architecture = config;
  model.parameters = {Tensor({config.input_size, 1}), Tensor({1})};
  Rng rng(seed);
  detail::glorot_fill(model.parameters[0], config.input_size, 1, rng);
  model.metadata.seed = seed;
  return model;
}

using EncodedExample = std::variant<text::BowVector, text::TokenSequence>;

struct Dataset {
  std::vector<EncodedExample> inputs;
  std::vector<int> labels;

  std::size_t size() const { return inputs.size(); }
  bool empty() const { return inputs.empty(); }
};

inline Dataset encode_bow_dataset(const std::vector<text::LabeledExample>& examples,
                                  const text::Vocabulary& vocab) {
  Dataset d;
  d.inputs.reserve(examples.size());
  for (const auto& ex : examples) {
    d.inputs.emplace_back(text::encode_bow(text::tokenize(ex.text), vocab));
    d.labels.push_back(ex.label);
  }
  return d;
}

inline Dataset encode_sequence_dataset(const std::vector<text::LabeledExample>& examples,
                                       const text::Vocabulary& vocab,
                                       std::size_t length) {
  Dataset d;
  d.inputs.reserve(examples.size());
  for (const auto& ex : examples) {
    d.inputs.emplace_back(text::encode_sequence(text::tokenize(ex.text), vocab, length));
    d.labels.push_back(ex.label);
  }
  return d;
}

inline void check_input(const TrainedModel& model, const EncodedExample& input) {
  if (model.is_cnn()) {
    const auto* seq = std::get_if<text::TokenSequence>(&input);
    if (!seq) {
      throw ShapeError("text-cnn model expects a token sequence, got a bag-of-words vector");
    }
    const auto& c = model.cnn_config();
    if (seq->length() != c.sequence_length) {
      throw ShapeError("text-cnn model expects sequences of length " +
                       std::to_string(c.sequence_length) + ", got " +
                       std::to_string(seq->length()));
    }
    return;
  }
  const auto* bow = std::get_if<text::BowVector>(&input);
  if (!bow) {
    throw ShapeError(std::string(architecture_name(model.architecture)) +
                     " model expects a bag-of-words vector, got a token sequence");
  }
  if (bow->dimension != model.feature_size()) {
    throw ShapeError("model expects " + std::to_string(model.feature_size()) +
                     " features, got " + std::to_string(bow->dimension));
  }
}

struct BoundParameters {
  std::vector<Var> vars;
};

inline BoundParameters bind_parameters(Tape& tape, const TrainedModel& model,
                                       bool requires_grad) {
  BoundParameters bound;
  for (const auto& p : model.parameters) {
    bound.vars.push_back(tape.parameter(p, requires_grad));
  }
  return bound;
}

struct BowTrace {
  std::vector<Var> pre_activations;  // hidden layers before ReLU
  Var score;                         // [1] or [batch, 1]
};

// features: [n] or [batch, n].
inline BowTrace bow_forward(Tape& tape, const TrainedModel& model,
                            const BoundParameters& p, Var features) {
  BowTrace trace;
  const auto& v = p.vars;
  if (std::holds_alternative<LinearConfig>(model.architecture)) {
    trace.score = tape.dense(features, v[0], v[1]);
    return trace;
  }
  if (!std::holds_alternative<BowMlpConfig>(model.architecture)) {
    throw ShapeError("bow_forward called on a text-cnn model");
  }
  Var h = features;
  for (std::size_t layer = 0; layer < 2; ++layer) {
    Var pre = tape.dense(h, v[2 * layer], v[2 * layer + 1]);
    trace.pre_activations.push_back(pre);
    h = tape.relu(pre);
  }
  trace.score = tape.dense(h, v[4], v[5]);
  return trace;
}

struct CnnTrace {
  Var embedded;  // [length, dim]
  Var conv;      // [length - width + 1, filters]
  Var pooled;    // [filters]
  Var score;     // [1]
};

inline CnnTrace cnn_forward_from_embedding(Tape& tape, const TrainedModel& model,
                                           const BoundParameters& p, Var embedded) {
  const auto& c = model.cnn_config();
  const Tensor& z = tape.value(embedded);
  if (z.shape() != Shape{c.sequence_length, c.embedding_dim}) {
    throw ShapeError("text-cnn embedding input " + shape_string(z.shape()) +
                     " does not match model " +
                     shape_string({c.sequence_length, c.embedding_dim}));
  }
  CnnTrace trace;
  trace.embedded = embedded;
  trace.conv = tape.conv1d(embedded, p.vars[1], p.vars[2]);
  trace.pooled = tape.max_pool_time(trace.conv);
  trace.score = tape.dense(trace.pooled, p.vars[3], p.vars[4]);
  return trace;
}

inline CnnTrace cnn_forward(Tape& tape, const TrainedModel& model,
                            const BoundParameters& p, const text::TokenSequence& seq) {
  Var embedded = tape.gather(p.vars[0], seq.ids);
  return cnn_forward_from_embedding(tape, model, p, embedded);
}

struct Prediction {
  double score = 0.0;        // pre-sigmoid
  double probability = 0.5;  // sigmoid(score)
  int label() const { return probability > 0.5 ? 1 : 0; }
};

inline Prediction make_prediction(double score) {
  return {score, autodiff::sigmoid(score)};
}

inline Prediction predict(const TrainedModel& model, const EncodedExample& input) {
  check_input(model, input);
  Tape tape;
  auto p = bind_parameters(tape, model, false);
  if (model.is_cnn()) {
    auto trace = cnn_forward(tape, model, p, std::get<text::TokenSequence>(input));
    return make_prediction(tape.value(trace.score)[0]);
  }
  Var x = tape.constant(Tensor::vector(std::get<text::BowVector>(input).dense()));
  return make_prediction(tape.value(bow_forward(tape, model, p, x).score)[0]);
}

// Black-box score of a real-valued feature vector (bow models).
inline double score_features(const TrainedModel& model, std::span<const double> x) {
  if (x.size() != model.feature_size()) {
    throw ShapeError("model expects " + std::to_string(model.feature_size()) +
                     " features, got " + std::to_string(x.size()));
  }
  Tape tape;
  auto p = bind_parameters(tape, model, false);
  Var in = tape.constant(Tensor::vector(std::vector<double>(x.begin(), x.end())));
  return tape.value(bow_forward(tape, model, p, in).score)[0];
}

// Black-box score of an embedded sequence [length, dim] (text-cnn).
inline double score_embedding(const TrainedModel& model, const Tensor& embedded) {
  Tape tape;
  auto p = bind_parameters(tape, model, false);
  auto trace = cnn_forward_from_embedding(tape, model, p, tape.constant(embedded));
  return tape.value(trace.score)[0];
}

inline Tensor embed(const TrainedModel& model, const text::TokenSequence& seq) {
  check_input(model, seq);
  Tape tape;
  auto p = bind_parameters(tape, model, false);
  return tape.value(tape.gather(p.vars[0], seq.ids));
}

namespace detail {

inline Tensor dense_batch(const Dataset& data, std::span<const std::size_t> rows,
                          std::size_t width) {
  Tensor x({rows.size(), width});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t d : std::get<text::BowVector>(data.inputs[rows[r]]).active) {
      x.at(r, d) = 1.0;
    }
  }
  return x;
}

// Scalar batch loss on `tape`; labels taken from `data`.
inline Var batch_loss(Tape& tape, const TrainedModel& model, const BoundParameters& p,
                      const Dataset& data, std::span<const std::size_t> rows) {
  std::vector<double> targets;
  targets.reserve(rows.size());
  for (std::size_t r : rows) targets.push_back(static_cast<double>(data.labels[r]));
  Var logits;
  if (model.is_cnn()) {
    std::vector<Var> scores;
    scores.reserve(rows.size());
    for (std::size_t r : rows) {
      scores.push_back(
          cnn_forward(tape, model, p, std::get<text::TokenSequence>(data.inputs[r])).score);
    }
    logits = tape.concat(scores);
  } else {
    Var x = tape.constant(dense_batch(data, rows, model.feature_size()));
    logits = bow_forward(tape, model, p, x).score;
  }
  return tape.binary_cross_entropy(logits, targets);
}

}  // namespace detail

inline std::vector<Prediction> predict_all(const TrainedModel& model,
                                           const std::vector<EncodedExample>& inputs) {
  std::vector<Prediction> out;
  out.reserve(inputs.size());
  if (model.is_cnn()) {
    for (const auto& in : inputs) out.push_back(predict(model, in));
    return out;
  }
  for (const auto& in : inputs) check_input(model, in);
  constexpr std::size_t kBatch = 256;
  Dataset view;
  view.inputs = inputs;
  for (std::size_t start = 0; start < inputs.size(); start += kBatch) {
    const std::size_t end = std::min(inputs.size(), start + kBatch);
    std::vector<std::size_t> rows(end - start);
    std::iota(rows.begin(), rows.end(), start);
    Tape tape;
    auto p = bind_parameters(tape, model, false);
    Var x = tape.constant(detail::dense_batch(view, rows, model.feature_size()));
    const Tensor& s = tape.value(bow_forward(tape, model, p, x).score);
    for (std::size_t r = 0; r < rows.size(); ++r) out.push_back(make_prediction(s[r]));
  }
  return out;
}

// Fraction of examples whose thresholded prediction (probability > 0.5)
// equals the label.
inline double evaluate(const TrainedModel& model, const Dataset& data) {
  if (data.empty()) throw DataError("cannot evaluate on an empty dataset");
  const auto preds = predict_all(model, data.inputs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].label() == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// ReLU on/off states (bow-mlp) or max-pool winners (text-cnn), plus the
// distance to the nearest point where that pattern could change.
struct ActivationProfile {
  std::vector<std::size_t> pattern;
  double margin = std::numeric_limits<double>::infinity();

  friend bool operator==(const ActivationProfile&, const ActivationProfile&) = default;
};

inline ActivationProfile activation_profile(const TrainedModel& model,
                                            std::span<const double> features) {
  Tape tape;
  auto p = bind_parameters(tape, model, false);
  Var in = tape.constant(Tensor::vector(std::vector<double>(features.begin(), features.end())));
  auto trace = bow_forward(tape, model, p, in);
  ActivationProfile prof;
  for (Var pre : trace.pre_activations) {
    for (double v : tape.value(pre).data()) {
      prof.pattern.push_back(v > 0.0 ? 1 : 0);
      prof.margin = std::min(prof.margin, std::abs(v));
    }
  }
  return prof;
}

inline ActivationProfile activation_profile_embedding(const TrainedModel& model,
                                                      const Tensor& embedded) {
  Tape tape;
  auto p = bind_parameters(tape, model, false);
  auto trace = cnn_forward_from_embedding(tape, model, p, tape.constant(embedded));
  const Tensor& conv = tape.value(trace.conv);
  const Tensor& pooled = tape.value(trace.pooled);
  ActivationProfile prof;
  const std::size_t steps = conv.extent(0);
  const std::size_t channels = conv.extent(1);
  for (std::size_t c = 0; c < channels; ++c) {
    std::size_t best = 0;
    while (conv.at(best, c) != pooled[c]) ++best;
    double runner_up = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < steps; ++t) {
      if (t != best) runner_up = std::max(runner_up, conv.at(t, c));
    }
    prof.pattern.push_back(best);
    prof.margin = std::min(prof.margin, pooled[c] - runner_up);
  }
  return prof;
}

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 32;
  std::size_t epochs = 5;
  std::uint64_t seed = 42;

  static TrainConfig defaults_for(const Architecture& arch) {
    TrainConfig c;
    c.epochs = std::holds_alternative<TextCnnConfig>(arch) ? 3 : 5;
    return c;
  }
};

inline void validate(const TrainConfig& c) {
  if (!(c.learning_rate > 0.0) || !(c.beta1 > 0.0 && c.beta1 < 1.0) ||
      !(c.beta2 > 0.0 && c.beta2 < 1.0) || !(c.epsilon > 0.0) || c.batch_size == 0) {
    throw ConfigError("training hyperparameters must be positive (decay rates in (0, 1))");
  }
}

// Minibatch Adam on mean binary cross-entropy. Shuffling and every other
// random choice derive from config.seed.
inline TrainedModel train(TrainedModel model, const Dataset& data,
                          const TrainConfig& config) {
  validate(config);
  check_parameters(model);
  if (data.empty()) throw DataError("cannot train on an empty dataset");
  if (data.labels.size() != data.size()) {
    throw ShapeError("dataset has " + std::to_string(data.size()) + " inputs but " +
                     std::to_string(data.labels.size()) + " labels");
  }
  for (const auto& in : data.inputs) check_input(model, in);

  std::vector<Tensor> m1;
  std::vector<Tensor> m2;
  for (const auto& p : model.parameters) {
    m1.emplace_back(p.shape(), 0.0);
    m2.emplace_back(p.shape(), 0.0);
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(config.seed);
  std::size_t step = 0;

  model.metadata.seed = config.seed;
  model.metadata.epochs = config.epochs;
  model.metadata.epoch_losses.clear();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::span<const std::size_t> rows(order.data() + start, end - start);

      Tape tape;
      auto p = bind_parameters(tape, model, true);
      Var loss = detail::batch_loss(tape, model, p, data, rows);
      const double loss_value = tape.value(loss)[0];
      if (!std::isfinite(loss_value)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(batch_index));
      }
      loss_sum += loss_value * static_cast<double>(rows.size());
      const auto grads = tape.backward(loss);

      ++step;
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < model.parameters.size(); ++i) {
        const Tensor& g = grads.at(p.vars[i]);
        auto w = model.parameters[i].data();
        auto a = m1[i].data();
        auto b = m2[i].data();
        for (std::size_t k = 0; k < w.size(); ++k) {
          a[k] = config.beta1 * a[k] + (1.0 - config.beta1) * g[k];
          b[k] = config.beta2 * b[k] + (1.0 - config.beta2) * g[k] * g[k];
          w[k] -= config.learning_rate * (a[k] / c1) /
                  (std::sqrt(b[k] / c2) + config.epsilon);
        }
      }
    }
    for (const auto& p : model.parameters) {
      if (!p.all_finite()) {
        throw NumericalError("non-finite parameters after epoch " + std::to_string(epoch));
      }
    }
    model.metadata.epoch_losses.push_back(loss_sum / static_cast<double>(data.size()));
  }
  return model;
}

}  // namespace gradlens::models
