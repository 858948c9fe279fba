// gradlens: train sentiment classifiers and explain them with input gradients.
//
//   gradlens train --arch bow-mlp|text-cnn (--data <root> | --synthetic) --out model.glns
//   gradlens attribute-local  --model model.glns [--examples 0,3] [--top 4]
//   gradlens attribute-global --model model.glns [--top-n 10] [--surrogate]
//   gradlens fd-check         --model model.glns [--samples 10] [--mode central]
//
// Exit codes: 0 success, 1 usage, 2 data, 3 numerical failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gradlens/gradlens.hpp"

namespace fs = std::filesystem;
using namespace gradlens;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

struct DataFlags {
  std::string root;
  bool synthetic = false;
};

void add_data_flags(CLI::App& cmd, DataFlags& flags) {
  if (const char* env = std::getenv("GRADLENS_DATA")) flags.root = env;
  cmd.add_option("--data", flags.root, "IMDB root with train/ and test/ (default: $GRADLENS_DATA)");
  cmd.add_flag("--synthetic", flags.synthetic, "use the built-in planted-word corpus");
}

// Fails fast, before any loading or training.
void check_data_flags(const DataFlags& flags) {
  if (flags.synthetic) return;
  if (flags.root.empty()) {
    throw ConfigError("no data source: pass --data <root>, set GRADLENS_DATA, or use --synthetic");
  }
  if (!fs::is_directory(flags.root)) throw DataError("data root not found: " + flags.root);
}

text::ImdbSplits load_splits(const DataFlags& flags, bool sequences) {
  if (!flags.synthetic) return text::load_imdb(flags.root);
  const auto cfg = sequences ? synthetic::sequence_corpus() : synthetic::bow_corpus();
  return synthetic::split(text::generate_synthetic_corpus(cfg));
}

models::Dataset encode(const models::TrainedModel& model,
                       const std::vector<text::LabeledExample>& examples) {
  if (model.is_cnn()) {
    return models::encode_sequence_dataset(examples, *model.vocabulary,
                                           model.cnn_config().sequence_length);
  }
  return models::encode_bow_dataset(examples, *model.vocabulary);
}

std::string vocab_path(const std::string& model_path) { return model_path + ".vocab"; }

models::TrainedModel load_model_with_vocabulary(const std::string& path) {
  if (path.empty()) throw ConfigError("--model is required");
  if (!fs::is_regular_file(path)) throw DataError("model file not found: " + path);
  auto model = models::load_model(path);
  auto vocab = std::make_shared<text::Vocabulary>(text::Vocabulary::load(vocab_path(path)));
  const std::size_t expected =
      model.is_cnn() ? model.cnn_config().vocabulary_size : model.feature_size();
  if (vocab->size() != expected) {
    throw DataError("vocabulary " + vocab_path(path) + " has " + std::to_string(vocab->size()) +
                    " entries but the model expects " + std::to_string(expected));
  }
  model.vocabulary = std::move(vocab);
  return model;
}

void write_output(const std::string& path, const std::string& body) {
  if (path.empty() || path == "-") {
    std::cout << body;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << body)) throw DataError("cannot write output file " + path);
}

void check_format(const std::string& format) {
  if (format != "json" && format != "tsv") {
    throw ConfigError("unknown format '" + format + "' (expected json or tsv)");
  }
}

// ---------------------------------------------------------------- train

struct TrainFlags {
  DataFlags data;
  std::string arch = "bow-mlp";
  std::string out = "model.glns";
  std::uint64_t seed = 42;
  int epochs = -1;
  std::size_t subset = 0;
  std::size_t vocab_size = 5000;
};

int run_train(const TrainFlags& f) {
  if (f.arch != "bow-mlp" && f.arch != "text-cnn") {
    throw ConfigError("unknown architecture '" + f.arch + "' (expected bow-mlp or text-cnn)");
  }
  check_data_flags(f.data);
  const bool cnn = f.arch == "text-cnn";
  auto splits = load_splits(f.data, cnn);
  if (f.subset > 0 && f.subset < splits.train.size()) {
    std::vector<std::size_t> order(splits.train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(f.seed);
    rng.shuffle(std::span<std::size_t>(order));
    order.resize(f.subset);
    std::sort(order.begin(), order.end());
    std::vector<text::LabeledExample> picked;
    for (std::size_t i : order) picked.push_back(std::move(splits.train[i]));
    splits.train = std::move(picked);
  }

  const std::size_t capacity = f.data.synthetic ? synthetic::kVocabularyCapacity : f.vocab_size;
  auto vocab = std::make_shared<text::Vocabulary>(text::build_vocabulary(splits.train, capacity));
  models::TrainedModel model;
  if (cnn) {
    models::TextCnnConfig c;
    c.vocabulary_size = vocab->size();
    if (f.data.synthetic) c = synthetic::compact_cnn(vocab->size());
    model = models::build_text_cnn(c, f.seed);
  } else {
    model = models::build_bow_mlp({vocab->size(), {250, 50}}, f.seed);
  }
  model.vocabulary = vocab;

  auto tc = models::TrainConfig::defaults_for(model.architecture);
  tc.seed = f.seed;
  if (cnn && f.data.synthetic) tc.epochs = synthetic::kCnnEpochs;
  if (f.epochs >= 0) tc.epochs = static_cast<std::size_t>(f.epochs);
  const auto train_set = encode(model, splits.train);
  const auto test_set = encode(model, splits.test);
  model = models::train(std::move(model), train_set, tc);
  model.metadata.train_accuracy = models::evaluate(model, train_set);
  model.metadata.test_accuracy = models::evaluate(model, test_set);

  models::save_model(model, f.out);
  vocab->save(vocab_path(f.out));
  std::cout << report::training_summary(model).dump(2) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- attribute-local

struct LocalFlags {
  DataFlags data;
  std::string model;
  std::vector<std::size_t> examples{0};
  std::size_t top = 4;
  std::string score = "logit";
  std::string format = "json";
  std::string out = "-";
};

int run_attribute_local(const LocalFlags& f) {
  const auto kind = attribution::parse_score_kind(f.score);
  check_format(f.format);
  check_data_flags(f.data);
  const auto model = load_model_with_vocabulary(f.model);
  if (!model.is_cnn()) {
    throw ShapeError("local attribution needs a text-cnn model; " + f.model + " is " +
                     std::string(models::architecture_name(model.architecture)));
  }
  const auto test = load_splits(f.data, true).test;
  for (std::size_t id : f.examples) {
    if (id >= test.size()) {
      throw IndexError("example " + std::to_string(id) + " out of range for " +
                       std::to_string(test.size()) + " test examples");
    }
  }
  std::vector<report::LocalReport> reports;
  for (std::size_t id : f.examples) {
    const auto seq = text::encode_sequence(text::tokenize(test[id].text), *model.vocabulary,
                                           model.cnn_config().sequence_length);
    reports.push_back(report::make_local_report(id, model, seq, *model.vocabulary, kind, f.top));
  }
  if (f.format == "tsv") {
    write_output(f.out, report::to_tsv(reports));
  } else {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : reports) j.push_back(report::to_json(r));
    write_output(f.out, j.dump(2) + "\n");
  }
  return kExitOk;
}

// ---------------------------------------------------------------- attribute-global

struct GlobalFlags {
  DataFlags data;
  std::string model;
  std::size_t top_n = 10;
  bool surrogate = false;
  std::string score = "logit";
  std::string format = "json";
  std::string out = "-";
};

int run_attribute_global(const GlobalFlags& f) {
  const auto kind = attribution::parse_score_kind(f.score);
  check_format(f.format);
  check_data_flags(f.data);
  const auto model = load_model_with_vocabulary(f.model);
  if (!model.is_bow()) {
    throw ShapeError("global attribution needs a bag-of-words model; " + f.model + " is " +
                     std::string(models::architecture_name(model.architecture)));
  }
  const auto test = encode(model, load_splits(f.data, false).test);
  const auto global = attribution::mean_gradient(model, test.inputs, kind);
  report::GlobalReport r;
  r.kind = kind;
  r.sample_count = global.sample_count;
  r.ranking = attribution::rank_global_words(global, *model.vocabulary, f.top_n);
  if (f.surrogate) r.surrogate_agreement = attribution::surrogate_agreement(global, model, test.inputs);
  write_output(f.out, f.format == "tsv" ? report::to_tsv(r) : report::to_json(r).dump(2) + "\n");
  return kExitOk;
}

// ---------------------------------------------------------------- fd-check

struct FdFlags {
  DataFlags data;
  std::string model;
  std::size_t samples = 10;
  double h = 1e-3;
  std::string mode = "central";
  double tol = 1e-4;
  std::string score = "logit";
  std::size_t coords = 0;
  std::uint64_t seed = 42;
};

int run_fd_check(const FdFlags& f) {
  const auto kind = attribution::parse_score_kind(f.score);
  const auto mode = attribution::parse_difference_mode(f.mode);
  if (!(f.h > 0.0)) throw ConfigError("--h must be positive");
  if (f.samples == 0) throw ConfigError("--samples must be at least 1");
  check_data_flags(f.data);
  const auto model = load_model_with_vocabulary(f.model);
  const auto test = encode(model, load_splits(f.data, model.is_cnn()).test);

  std::vector<std::size_t> order(test.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(f.seed);
  rng.shuffle(std::span<std::size_t>(order));

  std::size_t checked = 0;
  std::size_t skipped = 0;
  double max_rel = 0.0;
  double mean_rel = 0.0;
  for (std::size_t idx : order) {
    if (checked == f.samples) break;
    const auto& input = test.inputs[idx];
    std::vector<double> point;
    std::vector<double> autodiff_grad;
    Shape shape;
    if (model.is_cnn()) {
      const Tensor z = models::embed(model, std::get<text::TokenSequence>(input));
      shape = z.shape();
      point = z.values();
      autodiff_grad = attribution::embedding_gradient(model, z, kind).values;
    } else {
      point = std::get<text::BowVector>(input).dense();
      autodiff_grad = attribution::feature_gradient(model, point, kind).values;
    }
    auto pattern_at = [&](const std::vector<double>& p) {
      return model.is_cnn() ? models::activation_profile_embedding(model, Tensor(shape, p)).pattern
                            : models::activation_profile(model, p).pattern;
    };
    const auto base_pattern = pattern_at(point);

    // Perturb only the selected coordinates; the rest stay at the input.
    std::vector<std::size_t> coords(point.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (f.coords > 0 && f.coords < coords.size()) {
      rng.shuffle(std::span<std::size_t>(coords));
      coords.resize(f.coords);
      std::sort(coords.begin(), coords.end());
    }
    std::vector<double> sub(coords.size());
    std::vector<double> expected(coords.size());
    for (std::size_t k = 0; k < coords.size(); ++k) {
      sub[k] = point[coords[k]];
      expected[k] = autodiff_grad[coords[k]];
    }
    bool smooth = true;
    auto scorer = [&](std::span<const double> v) {
      auto p = point;
      for (std::size_t k = 0; k < coords.size(); ++k) p[coords[k]] = v[k];
      if (smooth && pattern_at(p) != base_pattern) smooth = false;
      return model.is_cnn() ? attribution::score_embedded(model, Tensor(shape, std::move(p)), kind)
                            : attribution::score(model, p, kind);
    };
    const auto fd = attribution::finite_difference_gradient(scorer, sub, f.h, mode);
    // A step that crosses a ReLU or max-pool switch measures a different
    // linear piece; such samples say nothing about the gradient code.
    if (!smooth) {
      ++skipped;
      continue;
    }
    const auto d = attribution::compare_gradients(expected, fd.gradient);
    max_rel = std::max(max_rel, d.max_relative);
    mean_rel += d.mean_relative;
    ++checked;
  }
  if (checked == 0) {
    throw NumericalError("no test example stayed clear of activation switches within h");
  }
  mean_rel /= static_cast<double>(checked);

  std::printf("mode: %s  h: %g  score: %s\n", std::string(attribution::difference_mode_name(mode)).c_str(),
              f.h, std::string(attribution::score_kind_name(kind)).c_str());
  std::printf("samples: %zu  skipped-near-switch: %zu\n", checked, skipped);
  std::printf("max-relative-error: %.6e\n", max_rel);
  std::printf("mean-relative-error: %.6e\n", mean_rel);
  if (!(max_rel < f.tol)) {
    std::fprintf(stderr, "gradlens: error: max relative error %.6e is not below tolerance %g\n",
                 max_rel, f.tol);
    return kExitNumerical;
  }
  return kExitOk;
}

int exit_code_for(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitUsage;
  if (dynamic_cast<const NumericalError*>(&e)) return kExitNumerical;
  return kExitData;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-based explanations for text classifiers", "gradlens"};
  app.require_subcommand(1);

  TrainFlags train;
  auto* train_cmd = app.add_subcommand("train", "train a classifier and save it");
  add_data_flags(*train_cmd, train.data);
  train_cmd->add_option("--arch", train.arch, "bow-mlp or text-cnn")->capture_default_str();
  train_cmd->add_option("--out", train.out, "model file; the vocabulary goes to <out>.vocab")
      ->capture_default_str();
  train_cmd->add_option("--seed", train.seed, "initialization and shuffling seed")
      ->capture_default_str();
  train_cmd->add_option("--epochs", train.epochs, "override the per-architecture default");
  train_cmd->add_option("--subset", train.subset, "train on a seeded random subset of this size");
  train_cmd->add_option("--vocab-size", train.vocab_size, "vocabulary capacity incl. <pad>/<unk>")
      ->capture_default_str();

  LocalFlags local;
  auto* local_cmd = app.add_subcommand("attribute-local", "per-token saliency for a text-cnn");
  add_data_flags(*local_cmd, local.data);
  local_cmd->add_option("--model", local.model, "trained text-cnn model")->required();
  local_cmd->add_option("--examples", local.examples, "test example indices")
      ->delimiter(',')
      ->capture_default_str();
  local_cmd->add_option("--top", local.top, "expressions per example")->capture_default_str();
  local_cmd->add_option("--score", local.score, "logit or probability")->capture_default_str();
  local_cmd->add_option("--format", local.format, "json or tsv")->capture_default_str();
  local_cmd->add_option("--out", local.out, "report file, - for stdout")->capture_default_str();

  GlobalFlags global;
  auto* global_cmd = app.add_subcommand("attribute-global", "mean-gradient word importance");
  add_data_flags(*global_cmd, global.data);
  global_cmd->add_option("--model", global.model, "trained bag-of-words model")->required();
  global_cmd->add_option("--top-n", global.top_n, "words per polarity")->capture_default_str();
  global_cmd->add_flag("--surrogate", global.surrogate, "report linear-surrogate agreement");
  global_cmd->add_option("--score", global.score, "logit or probability")->capture_default_str();
  global_cmd->add_option("--format", global.format, "json or tsv")->capture_default_str();
  global_cmd->add_option("--out", global.out, "report file, - for stdout")->capture_default_str();

  FdFlags fd;
  auto* fd_cmd = app.add_subcommand("fd-check", "compare autodiff against finite differences");
  fd_cmd->set_help_flag("--help", "print this help message and exit");  // frees -h for --h
  add_data_flags(*fd_cmd, fd.data);
  fd_cmd->add_option("--model", fd.model, "trained model")->required();
  fd_cmd->add_option("--samples", fd.samples, "test examples to check")->capture_default_str();
  fd_cmd->add_option("--h", fd.h, "finite-difference step")->capture_default_str();
  fd_cmd->add_option("--mode", fd.mode, "central or forward")->capture_default_str();
  fd_cmd->add_option("--tol", fd.tol, "maximum relative error for success")->capture_default_str();
  fd_cmd->add_option("--score", fd.score, "logit or probability")->capture_default_str();
  fd_cmd->add_option("--coords", fd.coords, "perturb this many random coordinates (0 = all)")
      ->capture_default_str();
  fd_cmd->add_option("--seed", fd.seed, "sampling seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) return run_train(train);
    if (*local_cmd) return run_attribute_local(local);
    if (*global_cmd) return run_attribute_global(global);
    return run_fd_check(fd);
  } catch (const Error& e) {
    std::fprintf(stderr, "gradlens: error: %s\n", e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "gradlens: error: %s\n", e.what());
    return kExitData;
  }
}
