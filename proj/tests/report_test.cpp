#include "gradlens/report.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

namespace gradlens::report {
namespace {

using attribution::ScoreKind;

models::TrainedModel small_cnn() { return models::build_text_cnn({10, 8, 3, 4, 3}, 5); }

text::Vocabulary small_vocab() {
  return text::Vocabulary::from_words({"great", "film", "total", "waste", "plot", "fine"});
}

TEST(LocalReportJson, SchemaAndCounts) {
  const auto m = small_cnn();
  const auto vocab = small_vocab();
  const text::TokenSequence seq{{0, 0, 0, 0, 2, 3, 4, 5, 6, 7}, 6};
  const auto r = make_local_report(17, m, seq, vocab, ScoreKind::kLogit, 4);
  const auto j = to_json(r);
  EXPECT_EQ(j["example-id"], 17);
  EXPECT_EQ(j["score-kind"], "logit");
  EXPECT_EQ(j["tokens"].size(), 6u);
  EXPECT_EQ(j["tokens"][0], "great");
  ASSERT_EQ(j["saliency"].size(), 6u);
  for (const auto& s : j["saliency"]) {
    EXPECT_TRUE(s.contains("position"));
    EXPECT_TRUE(s.contains("token"));
    EXPECT_TRUE(s.contains("norm"));
    EXPECT_TRUE(s.contains("rank"));
  }
  ASSERT_EQ(j["expressions"].size(), 4u);
  for (const auto& e : j["expressions"]) {
    EXPECT_TRUE(e["window"].is_array());
    EXPECT_GE(e["window"].size(), 1u);
    EXPECT_LE(e["window"].size(), 3u);
  }
  EXPECT_EQ(j["expressions"][0]["anchor"], j["saliency"][0]["position"]);
}

TEST(GlobalReportJson, SchemaWithAndWithoutAgreement) {
  GlobalReport r;
  r.sample_count = 25;
  r.ranking.positive = {{"excellent", 3, 0.25}};
  r.ranking.negative = {{"worst", 4, -0.5}};
  auto j = to_json(r);
  EXPECT_EQ(j["score-kind"], "logit");
  EXPECT_EQ(j["sample-count"], 25);
  EXPECT_EQ(j["positive"][0]["word"], "excellent");
  EXPECT_EQ(j["positive"][0]["value"], 0.25);
  EXPECT_EQ(j["negative"][0]["value"], -0.5);
  EXPECT_TRUE(j["surrogate-agreement"].is_null());
  r.surrogate_agreement = 0.996;
  EXPECT_EQ(to_json(r)["surrogate-agreement"], 0.996);
}

TEST(TrainingSummary, MissingAccuraciesAreNull) {
  auto m = models::build_linear({1.0, 2.0}, 0.0);
  m.metadata.seed = 42;
  auto j = training_summary(m);
  EXPECT_EQ(j["architecture"], "linear");
  EXPECT_EQ(j["seed"], 42);
  EXPECT_EQ(j["parameter-count"], 3);
  EXPECT_TRUE(j["test-accuracy"].is_null());
  m.metadata.test_accuracy = 0.9;
  EXPECT_EQ(training_summary(m)["test-accuracy"], 0.9);
}

TEST(Tsv, NumberFormatting) {
  EXPECT_EQ(format_number(0.0961234567), "0.0961235");
  EXPECT_EQ(format_number(-0.16), "-0.16");
  EXPECT_EQ(format_number(1234567.0), "1.23457e+06");
  EXPECT_EQ(format_number(2.0), "2");
}

TEST(Tsv, LocalRowsPerExpression) {
  LocalReport r;
  r.example_id = 3;
  r.saliency = {{5, "waste", 0.5, 1}, {2, "great", 0.25, 2}};
  r.expressions = {{5, {"waste"}, 0.5}, {2, {"great", "film", "total"}, 0.25}};
  EXPECT_EQ(to_tsv(std::vector<LocalReport>{r}),
            "example-id\trank\ttoken\tnorm\texpression\n"
            "3\t1\twaste\t0.5\twaste\n"
            "3\t2\tgreat\t0.25\tgreat film total\n");
}

TEST(Tsv, GlobalRowsAndAgreement) {
  GlobalReport r;
  r.ranking.positive = {{"excellent", 3, 0.096}, {"great", 4, 0.091}};
  r.ranking.negative = {{"worst", 5, -0.16}};
  EXPECT_EQ(to_tsv(r),
            "polarity\trank\tword\tvalue\n"
            "positive\t1\texcellent\t0.096\n"
            "positive\t2\tgreat\t0.091\n"
            "negative\t1\tworst\t-0.16\n");
  r.surrogate_agreement = 0.99628;
  const auto tsv = to_tsv(r);
  EXPECT_NE(tsv.find("\nsurrogate-agreement\t\t\t0.99628\n"), std::string::npos);
}

TEST(Tsv, EveryRowHasHeaderColumnCount) {
  const auto m = small_cnn();
  const auto vocab = small_vocab();
  std::vector<LocalReport> reports;
  reports.push_back(make_local_report(
      0, m, text::TokenSequence{{0, 0, 0, 2, 3, 4, 5, 6, 7, 1}, 7}, vocab, ScoreKind::kLogit, 4));
  reports.push_back(make_local_report(
      1, m, text::TokenSequence{{0, 0, 0, 0, 0, 0, 0, 0, 4, 5}, 2}, vocab,
      ScoreKind::kProbability, 4));
  std::istringstream in(to_tsv(reports));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 4) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 1u + 4u + 2u);
}

TEST(Determinism, IdenticalInputsGiveIdenticalBytes) {
  auto render = [] {
    const auto m = small_cnn();
    const auto vocab = small_vocab();
    const text::TokenSequence seq{{0, 0, 2, 3, 4, 5, 6, 7, 2, 3}, 8};
    return to_json(make_local_report(0, m, seq, vocab, ScoreKind::kLogit, 4)).dump(2);
  };
  EXPECT_EQ(render(), render());
}

}  // namespace
}  // namespace gradlens::report
