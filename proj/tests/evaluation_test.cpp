#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "ddnet/errors.hpp"
#include "ddnet/evaluation.hpp"
#include "support/fixture.hpp"

using namespace ddnet;
using ddnet::testing::make_corpus;
using ddnet::testing::tiny_model_config;

TEST(NormalizeAnswer, HandCases) {
  EXPECT_EQ(normalize_answer("White."), "white");
  EXPECT_EQ(normalize_answer("a little white kitten named Cotton."), "little white kitten named cotton");
  EXPECT_EQ(normalize_answer(""), "");
  EXPECT_EQ(normalize_answer("  The   Barn,  an apple "), "barn apple");
  EXPECT_EQ(normalize_answer("theatre"), "theatre");
}

TEST(EmF1, HandTable) {
  const std::vector<std::string> white{"white"};
  auto a = em_f1("white", white);
  EXPECT_EQ(a.em, 1.0);
  EXPECT_EQ(a.f1, 1.0);

  const std::vector<std::string> barn{"in a barn"};
  auto b = em_f1("a barn", barn);
  EXPECT_EQ(b.em, 0.0);
  EXPECT_NEAR(b.f1, 2.0 / 3.0, 1e-12);

  const std::vector<std::string> no{"no"};
  auto c = em_f1("", no);
  EXPECT_EQ(c.em, 0.0);
  EXPECT_EQ(c.f1, 0.0);
}

TEST(EmF1, EmptyOnBothSidesIsAPerfectMatch) {
  const std::vector<std::string> gold{"the"};
  auto r = em_f1("a", gold);
  EXPECT_EQ(r.em, 1.0);
  EXPECT_EQ(r.f1, 1.0);
}

TEST(EmF1, BestGoldWinsAndDuplicatesCount) {
  const std::vector<std::string> golds{"red barn", "big red barn"};
  EXPECT_EQ(em_f1("big red barn", golds).em, 1.0);
  // multiset: pred {red, red}, gold {red, barn}: one overlap
  EXPECT_NEAR(f1_score("red red", "red barn"), 0.5, 1e-12);
}

TEST(EmF1, EmptyGoldListIsAContractError) {
  EXPECT_THROW(em_f1("white", std::vector<std::string>{}), ContractError);
}

TEST(EmF1, F1IsSymmetricForSingletonGolds) {
  const std::vector<std::pair<std::string, std::string>> pairs{
      {"in a barn", "a barn near the farm"}, {"white kitten", "kitten"}, {"x y z", "z z y"}};
  for (const auto& [p, g] : pairs) EXPECT_DOUBLE_EQ(f1_score(p, g), f1_score(g, p));
}

TEST(EvalReport, AggregatesAreMeansAndPermutationInvariant) {
  EvalReport r;
  r.per_example = {{"s", 0, 1, 1, "a", {"a"}}, {"s", 1, 0, 0.5, "b", {"b c"}}, {"t", 0, 0, 0, "", {"no"}}};
  r.aggregate();
  EXPECT_EQ(r.count, 3u);
  EXPECT_DOUBLE_EQ(r.em, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.f1, 0.5);
  std::reverse(r.per_example.begin(), r.per_example.end());
  r.aggregate();
  EXPECT_DOUBLE_EQ(r.em, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.f1, 0.5);
}

TEST(EvalReport, CsvQuotesFieldsAndJoinsGolds) {
  EvalReport r;
  r.per_example = {{"s,1", 2, 1, 1, "say \"hi\"", {"a", "b"}}};
  r.aggregate();
  const auto csv = r.per_example_csv();
  EXPECT_EQ(csv, "story_id,turn_index,em,f1,predicted,golds\n\"s,1\",2,1,1,\"say \"\"hi\"\"\",a|b\n");
  const auto jsonl = r.predictions_jsonl();
  auto j = nlohmann::json::parse(jsonl.substr(0, jsonl.find('\n')));
  EXPECT_EQ(j["turn_id"], 2);
  EXPECT_EQ(j["answer"], "say \"hi\"");
}

TEST(Evaluate, OracleSpansScorePerfectly) {
  auto corpus = make_corpus(20, 3);
  ASSERT_GT(corpus.examples.size(), 40u);
  double em = 0.0;
  for (const auto& ex : corpus.examples) {
    const auto& v = ex.clean;
    std::string text = "unknown";
    if (v.gold_start != 0) {
      text.clear();
      for (std::size_t k = v.gold_start; k <= v.gold_end; ++k) {
        if (!text.empty()) text += ' ';
        text += v.doc_tokens[k - v.doc_offset];
      }
    }
    em += em_f1(text, ex.gold_answer_texts).em;
  }
  EXPECT_EQ(em / static_cast<double>(corpus.examples.size()), 1.0);
}

TEST(Evaluate, RandomInitModelScoresBelowPointTwoF1) {
  auto corpus = make_corpus(25, 4);
  ASSERT_GE(corpus.examples.size(), 100u);
  std::span<const Example> hundred(corpus.examples.data(), 100);
  QAModel model(tiny_model_config(corpus));
  auto report = evaluate(model, hundred, corpus.tokenizer, View::clean, "train");
  EXPECT_EQ(report.count, 100u);
  EXPECT_LT(report.f1, 0.2);
}

TEST(Evaluate, SameCheckpointTwiceGivesIdenticalReports) {
  auto corpus = make_corpus(6, 5);
  QAModel model(tiny_model_config(corpus));
  auto a = evaluate(model, corpus.examples, corpus.tokenizer, View::asr, "dev");
  auto b = evaluate(model, corpus.examples, corpus.tokenizer, View::asr, "dev");
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  EXPECT_EQ(a.per_example_csv(), b.per_example_csv());
  EXPECT_EQ(a.predictions_jsonl(), b.predictions_jsonl());
  for (const auto& e : a.per_example) {
    if (e.em == 1.0) {
      EXPECT_EQ(e.f1, 1.0);
    }
  }
}

TEST(Evaluate, TokenizerMismatchIsAConfigError) {
  auto corpus = make_corpus(4, 6);
  QAModel model(tiny_model_config(corpus));
  Tokenizer other;
  EXPECT_THROW(evaluate(model, corpus.examples, other, View::clean, "dev"), ConfigError);
  model.tokenizer_fingerprint = corpus.tokenizer.fingerprint() ^ 1;
  EXPECT_THROW(evaluate(model, corpus.examples, corpus.tokenizer, View::clean, "dev"), ConfigError);
}

TEST(Evaluate, WriteEmitsThreeFiles) {
  EvalReport r;
  r.split = "dev";
  r.per_example = {{"s", 0, 1, 1, "a", {"a"}}};
  r.aggregate();
  const auto dir = std::filesystem::temp_directory_path() / "ddnet_eval_test";
  r.write(dir, "dev_report");
  EXPECT_TRUE(std::filesystem::exists(dir / "dev_report.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "dev_report.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "dev_report_predictions.jsonl"));
}
