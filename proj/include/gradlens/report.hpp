#pragma once

// JSON and TSV renderings of attribution results and training summaries.
// Output contains no timestamps, so identical inputs give identical bytes.

#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gradlens/attribution.hpp"
#include "gradlens/models.hpp"

namespace gradlens::report {

using nlohmann::json;

struct LocalReport {
  std::size_t example_id = 0;
  attribution::ScoreKind kind = attribution::ScoreKind::kLogit;
  std::vector<std::string> tokens;  // non-pad tokens in order
  std::vector<attribution::TokenSaliency> saliency;
  std::vector<attribution::ExpressionWindow> expressions;
};

struct GlobalReport {
  attribution::ScoreKind kind = attribution::ScoreKind::kLogit;
  std::size_t sample_count = 0;
  attribution::WordRanking ranking;
  std::optional<double> surrogate_agreement;
};

inline LocalReport make_local_report(std::size_t example_id,
                                     const models::TrainedModel& model,
                                     const text::TokenSequence& seq,
                                     const text::Vocabulary& vocab,
                                     attribution::ScoreKind kind, std::size_t top_m) {
  LocalReport r;
  r.example_id = example_id;
  r.kind = kind;
  const auto all = attribution::position_tokens(seq, &vocab);
  r.tokens.assign(all.begin() + static_cast<std::ptrdiff_t>(seq.first_token()), all.end());
  r.saliency = attribution::token_saliency(model, seq, kind, &vocab);
  r.expressions = attribution::extract_expressions(r.saliency, all,
                                                   model.cnn_config().filter_width, top_m);
  return r;
}

inline json to_json(const LocalReport& r) {
  json saliency = json::array();
  for (const auto& s : r.saliency) {
    saliency.push_back({{"position", s.position}, {"token", s.token}, {"norm", s.norm},
                        {"rank", s.rank}});
  }
  json expressions = json::array();
  for (const auto& e : r.expressions) {
    expressions.push_back({{"anchor", e.anchor}, {"window", e.window}, {"norm", e.norm}});
  }
  return {{"example-id", r.example_id},
          {"score-kind", attribution::score_kind_name(r.kind)},
          {"tokens", r.tokens},
          {"saliency", std::move(saliency)},
          {"expressions", std::move(expressions)}};
}

inline json to_json(const GlobalReport& r) {
  auto words = [](const std::vector<attribution::WordValue>& list) {
    json out = json::array();
    for (const auto& w : list) out.push_back({{"word", w.word}, {"value", w.value}});
    return out;
  };
  json j = {{"score-kind", attribution::score_kind_name(r.kind)},
            {"sample-count", r.sample_count},
            {"positive", words(r.ranking.positive)},
            {"negative", words(r.ranking.negative)}};
  j["surrogate-agreement"] =
      r.surrogate_agreement ? json(*r.surrogate_agreement) : json(nullptr);
  return j;
}

inline json training_summary(const models::TrainedModel& model) {
  auto number = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  return {{"architecture", models::architecture_name(model.architecture)},
          {"seed", model.metadata.seed},
          {"epochs", model.metadata.epochs},
          {"epoch-losses", model.metadata.epoch_losses},
          {"parameter-count", models::parameter_count(model)},
          {"train-accuracy", number(model.metadata.train_accuracy)},
          {"test-accuracy", number(model.metadata.test_accuracy)}};
}

// Six significant digits, "." decimal separator.
inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// One row per expression: example-id, rank, token, norm, expression.
inline std::string to_tsv(const std::vector<LocalReport>& reports) {
  std::ostringstream out;
  out << "example-id\trank\ttoken\tnorm\texpression\n";
  for (const auto& r : reports) {
    for (const auto& e : r.expressions) {
      std::size_t rank = 0;
      std::string token;
      for (const auto& s : r.saliency) {
        if (s.position == e.anchor) {
          rank = s.rank;
          token = s.token;
          break;
        }
      }
      std::string expr;
      for (std::size_t k = 0; k < e.window.size(); ++k) {
        if (k) expr.push_back(' ');
        expr += e.window[k];
      }
      out << r.example_id << '\t' << rank << '\t' << token << '\t' << format_number(e.norm)
          << '\t' << expr << '\n';
    }
  }
  return out.str();
}

// Rows: polarity, rank, word, value. The agreement, when present, is a final
// row with polarity "surrogate-agreement" and empty rank/word.
inline std::string to_tsv(const GlobalReport& r) {
  std::ostringstream out;
  out << "polarity\trank\tword\tvalue\n";
  auto rows = [&](const char* polarity, const std::vector<attribution::WordValue>& list) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      out << polarity << '\t' << i + 1 << '\t' << list[i].word << '\t'
          << format_number(list[i].value) << '\n';
    }
  };
  rows("positive", r.ranking.positive);
  rows("negative", r.ranking.negative);
  if (r.surrogate_agreement) {
    out << "surrogate-agreement\t\t\t" << format_number(*r.surrogate_agreement) << '\n';
  }
  return out.str();
}

}  // namespace gradlens::report
