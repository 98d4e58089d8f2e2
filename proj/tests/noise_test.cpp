#include <gtest/gtest.h>

#include "ddnet/errors.hpp"
#include "ddnet/noise.hpp"
#include "support/fixture.hpp"

using namespace ddnet;

namespace {

NoiseSpec rates(double s, double d, double i, std::uint64_t seed = 1) {
  NoiseSpec spec;
  spec.sub_rate = s;
  spec.del_rate = d;
  spec.ins_rate = i;
  spec.seed = seed;
  return spec;
}

std::vector<Story> corpus_of_words(std::size_t min_words, std::uint64_t seed) {
  std::vector<Story> stories;
  std::size_t words = 0;
  int n = 50;
  while (words < min_words) {
    stories = generate_synthetic(n, seed);
    words = 0;
    for (const auto& s : stories) words += wer_words(s.document).size();
    n *= 2;
  }
  return stories;
}

double corpus_wer(const std::vector<Story>& stories, const NoiseSpec& spec) {
  NoiseStats stats;
  corrupt_dataset(stories, spec, &stats);
  return stats.documents.rate();
}

}  // namespace

TEST(AsrCorrupt, ZeroRatesAreIdentity) {
  const std::string text = "Once upon a time, in a barn near a farm house.";
  auto c = asr_corrupt(text, rates(0, 0, 0));
  EXPECT_EQ(c.text, text);
  EXPECT_FALSE(c.deletion_disabled);
}

TEST(AsrCorrupt, DeterministicAndOrderIndependent) {
  const auto spec = rates(0.2, 0.1, 0.1, 42);
  const std::string a = "what color was cotton", b = "where did she live";
  auto a1 = asr_corrupt(a, spec).text;
  asr_corrupt(b, spec);
  EXPECT_EQ(asr_corrupt(a, spec).text, a1);
  auto other = spec;
  other.seed = 43;
  bool differs = false;
  for (int i = 0; i < 20 && !differs; ++i) {
    const std::string t = "the cat number " + std::to_string(i) + " sat on the mat near the barn";
    differs = asr_corrupt(t, spec).text != asr_corrupt(t, other).text;
  }
  EXPECT_TRUE(differs);
}

TEST(AsrCorrupt, NeverEmptiesTheText) {
  const auto spec = rates(0.0, 0.95, 0.0, 3);
  int retries = 0;
  for (int i = 0; i < 50; ++i) {
    auto c = asr_corrupt("one two", spec);
    auto words = wer_words(c.text);
    EXPECT_FALSE(words.empty());
    retries += c.deletion_disabled;
    auto spec2 = spec;
    spec2.seed = static_cast<std::uint64_t>(i);
    auto c2 = asr_corrupt("just one", spec2);
    EXPECT_FALSE(wer_words(c2.text).empty());
    retries += c2.deletion_disabled;
  }
  EXPECT_GT(retries, 0);
}

TEST(AsrCorrupt, SubstitutionUsesTheConfusionTable) {
  auto spec = rates(0.99, 0.0, 0.0, 5);
  spec.confusion_table = ConfusionTable{{"cotton", {"caught in"}}};
  auto c = asr_corrupt("cotton", spec);
  EXPECT_EQ(c.text, "caught in");
  // punctuation stays attached
  EXPECT_EQ(asr_corrupt("Cotton.", spec).text.back(), '.');
}

TEST(NoiseSpec, ValidationAndJson) {
  EXPECT_THROW(rates(0.5, 0.3, 0.3).validate(), ParameterError);
  EXPECT_THROW(rates(-0.1, 0, 0).validate(), ParameterError);
  auto bad = rates(0.1, 0, 0);
  bad.confusion_table = ConfusionTable{{"x", {}}};
  EXPECT_THROW(bad.validate(), ParameterError);
  EXPECT_NO_THROW(NoiseSpec{}.validate());
  EXPECT_NEAR(NoiseSpec{}.total_rate(), 0.25, 1e-12);
  auto spec = rates(0.1, 0.05, 0.05, 9);
  auto back = noise_spec_from_json(to_json(spec));
  EXPECT_EQ(back.sub_rate, 0.1);
  EXPECT_EQ(back.seed, 9u);
  auto j = to_json(spec);
  j["typo"] = 1;
  EXPECT_THROW(noise_spec_from_json(j), ConfigError);
}

TEST(ConfusionTable, BuiltinHasAboutAHundredEntriesAndRoundTrips) {
  const auto& t = builtin_confusion_table();
  EXPECT_GE(t.size(), 100u);
  EXPECT_TRUE(t.contains("cotton"));
  EXPECT_TRUE(t.contains("barn"));
  EXPECT_EQ(confusion_table_from_json(to_json(t)), t);
  EXPECT_THROW(confusion_table_from_json(nlohmann::json{{"x", nlohmann::json::array()}}), ConfigError);
}

TEST(Wer, HandCases) {
  EXPECT_EQ(wer("what color was cotton", "what color was cotton"), 0.0);
  EXPECT_DOUBLE_EQ(wer("what color was cotton", "what color was caught in"), 0.5);
  EXPECT_DOUBLE_EQ(wer("What color was Cotton?", "What color was caught in?"), 0.5);
  EXPECT_EQ(wer("a b c", ""), 1.0);
  EXPECT_THROW(wer("", "x"), ContractError);
  EXPECT_THROW(wer("?!", "x"), ContractError);
}

TEST(Wer, TriangleBoundOnRawDistances) {
  Rng rng(7);
  const std::vector<std::string> vocab{"a", "b", "c", "d", "e"};
  auto random_words = [&] {
    std::vector<std::string> w(1 + rng() % 8);
    for (auto& x : w) x = vocab[rng() % vocab.size()];
    return w;
  };
  for (int i = 0; i < 300; ++i) {
    auto a = random_words(), b = random_words(), c = random_words();
    EXPECT_LE(edit_distance(a, c), edit_distance(a, b) + edit_distance(b, c));
    EXPECT_EQ(edit_distance(a, b), edit_distance(b, a));
    EXPECT_EQ(edit_distance(a, a), 0u);
  }
}

TEST(NoiseCalibration, TenThousandWordsMatchTheRateSum) {
  auto stories = corpus_of_words(10000, 1);
  const auto spec = rates(0.1, 0.05, 0.05, 11);
  EXPECT_NEAR(corpus_wer(stories, spec), 0.20, 0.03);
  EXPECT_NEAR(corpus_wer(stories, NoiseSpec{}), 0.25, 0.03);
}

TEST(NoiseCalibration, WerIsMonotoneInEachRate) {
  auto stories = corpus_of_words(5000, 2);
  const double grid[] = {0.0, 0.1, 0.2, 0.3};
  for (int which = 0; which < 3; ++which) {
    double prev = -1.0;
    for (double r : grid) {
      double s = 0.05, d = 0.05, i = 0.05;
      (which == 0 ? s : which == 1 ? d : i) = r;
      double mean = 0.0;
      for (std::uint64_t seed = 1; seed <= 3; ++seed) mean += corpus_wer(stories, rates(s, d, i, seed)) / 3.0;
      EXPECT_GE(mean, prev - 0.005) << "rate " << which << " at " << r;
      prev = mean;
    }
  }
}

TEST(CorruptDataset, KeepsCleanViewsAndExistingAsrText) {
  auto stories = generate_synthetic(10, 4);
  stories[0].asr_document = "already transcribed";
  auto noisy = corrupt_dataset(stories, NoiseSpec{});
  ASSERT_EQ(noisy.size(), stories.size());
  EXPECT_EQ(*noisy[0].asr_document, "already transcribed");
  for (std::size_t i = 0; i < stories.size(); ++i) {
    EXPECT_EQ(noisy[i].document, stories[i].document);
    ASSERT_TRUE(noisy[i].asr_document.has_value());
    for (std::size_t t = 0; t < stories[i].turns.size(); ++t) {
      EXPECT_EQ(noisy[i].turns[t].question, stories[i].turns[t].question);
      EXPECT_EQ(noisy[i].turns[t].answer, stories[i].turns[t].answer);
      EXPECT_TRUE(noisy[i].turns[t].asr_question.has_value());
    }
  }
}
