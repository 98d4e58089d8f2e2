#include <gtest/gtest.h>

#include <cmath>

#include "ddnet/errors.hpp"
#include "ddnet/qa_model.hpp"
#include "support/fixture.hpp"

using namespace ddnet;
using ddnet::testing::random_tensor;

namespace {

QAModelConfig mini_config(FusionMode mode = FusionMode::cross_attention, std::uint64_t seed = 1) {
  QAModelConfig c;
  c.text.num_layers = 1;
  c.text.num_heads = 2;
  c.text.d_model = 8;
  c.text.d_ff = 16;
  c.text.vocab_size = 30;
  c.text.max_len = 24;
  c.text.dropout_rate = 0.0;
  c.text.seed = seed;
  c.speech = c.text;
  c.speech.vocab_size = 16;
  c.fusion = mode;
  c.num_joint_layers = 1;
  return c;
}

struct Input {
  std::vector<std::size_t> text{2, 10, 11, 3, 12, 13, 14, 15, 16, 3};
  std::vector<std::size_t> speech{1, 5, 9, 9, 4};
  ModelInput view() const { return {text, 4, 5, speech}; }
};

SpanLogits logits_from(std::vector<double> start, std::vector<double> end) {
  SpanLogits l;
  l.doc_len = start.size() - 1;
  l.doc_offset = 1;
  l.start = Tensor::vector(std::move(start));
  l.end = Tensor::vector(std::move(end));
  return l;
}

std::vector<std::string> doc(std::size_t n) {
  std::vector<std::string> d;
  for (std::size_t i = 0; i < n; ++i) d.push_back("w" + std::to_string(i));
  return d;
}

}  // namespace

TEST(QAModel, LogitsCoverSentinelPlusDocument) {
  QAModel m(mini_config());
  Input in;
  auto z = m.forward(in.view());
  EXPECT_EQ(z.start.shape(), (Shape{6}));
  EXPECT_EQ(z.end.shape(), (Shape{6}));
  EXPECT_EQ(z.slot_of(0), 0u);
  EXPECT_EQ(z.slot_of(4), 1u);
  EXPECT_EQ(z.slot_of(8), 5u);
  EXPECT_THROW(z.slot_of(9), BoundsError);
  EXPECT_THROW(z.slot_of(2), BoundsError);
}

TEST(QAModel, ForwardIsDeterministicForEveryMode) {
  for (auto mode : kAllFusionModes) {
    QAModel m(mini_config(mode));
    Input in;
    auto a = m.forward(in.view());
    auto b = m.forward(in.view());
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_EQ(a.start[i], b.start[i]);
      EXPECT_EQ(a.end[i], b.end[i]);
    }
  }
}

TEST(QAModel, SameSeedGivesSameFingerprint) {
  QAModel a(mini_config()), b(mini_config()), c(mini_config(FusionMode::cross_attention, 2));
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  EXPECT_NE(a.fingerprint(), c.fingerprint());
}

TEST(QAModel, SoftmaxOverSlotsSumsToOne) {
  QAModel m(mini_config());
  Input in;
  auto z = m.forward(in.view());
  for (const auto& t : {z.start, z.end}) {
    auto p = softmax_t(t, 1.0);
    double s = 0.0;
    for (double v : p.data()) s += v;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(QAModel, OverlongPackedSequenceIsALengthError) {
  QAModel m(mini_config());
  std::vector<std::size_t> text(25, 7);
  std::vector<std::size_t> speech{1, 2};
  EXPECT_THROW(m.forward({text, 1, 20, speech}), LengthError);
}

TEST(QAModel, BadDocumentRegionIsAContractError) {
  QAModel m(mini_config());
  Input in;
  EXPECT_THROW(m.forward({in.text, 4, 0, in.speech}), ContractError);
  EXPECT_THROW(m.forward({in.text, 8, 5, in.speech}), ContractError);
}

TEST(QAModel, SpeechOnlyIgnoresDocumentTokens) {
  QAModel m(mini_config(FusionMode::speech_only));
  Input a, b;
  b.text[5] = 20;
  auto za = m.forward(a.view());
  auto zb = m.forward(b.view());
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(za.start[i], zb.start[i]);
}

TEST(QAModel, FusionModesShareDownstreamParameterCount) {
  // cross attention adds only its own block
  QAModel con(mini_config(FusionMode::con_fusion));
  QAModel txt(mini_config(FusionMode::text_only));
  QAModel sp(mini_config(FusionMode::speech_only));
  EXPECT_EQ(con.parameter_count(), txt.parameter_count());
  EXPECT_EQ(con.parameter_count(), sp.parameter_count());
  QAModel ca(mini_config(FusionMode::cross_attention));
  EXPECT_EQ(ca.parameter_count(), con.parameter_count() + 4 * (8 * 8 + 8));
}

TEST(QAModel, SpanHeadCrossEntropyPassesGradCheck) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    QAModel m(mini_config(FusionMode::cross_attention, seed));
    Input in;
    NamedParameters head;
    for (const auto& [name, t] : m.parameters())
      if (name.rfind("span.", 0) == 0) head.emplace_back(name, t);
    ASSERT_EQ(head.size(), 4u);
    std::vector<Tensor> params;
    for (auto& [n, t] : head) params.push_back(t);
    auto f = [&] { return cross_entropy(m.forward(in.view()).start, 3); };
    EXPECT_LT(grad_check_params(f, params), 1e-4);
  }
}

TEST(QAModel, FullModelPassesGradCheckOnSampledEntries) {
  for (auto mode : kAllFusionModes) {
    QAModel m(mini_config(mode, 4));
    Input in;
    auto f = [&] {
      auto z = m.forward(in.view());
      return add(cross_entropy(z.start, 2), cross_entropy(z.end, 4));
    };
    const auto params = m.parameter_tensors();
    EXPECT_LT(grad_check_params(f, params, 1e-5, 6), 1e-4) << to_string(mode);
  }
}

TEST(QAModel, EveryParameterGroupReceivesGradient) {
  for (auto mode : kAllFusionModes) {
    QAModel m(mini_config(mode, 5));
    Input in;
    Tape tape;
    auto z = m.forward(in.view());
    tape.backward(add(cross_entropy(z.start, 2), cross_entropy(z.end, 4)));
    for (const auto& [name, t] : m.parameters()) {
      // text_only never reads the speech stream
      if (mode == FusionMode::text_only && name.rfind("speech_encoder", 0) == 0) continue;
      // a bias shared by every slot cancels inside the softmax
      if (name == "span.start.bias" || name == "span.end.bias") continue;
      double norm = 0.0;
      for (double g : t.grad()) norm += g * g;
      EXPECT_GT(norm, 0.0) << to_string(mode) << " " << name;
    }
  }
}

TEST(PredictAnswer, UnambiguousPeak) {
  std::vector<double> s(9, -10.0), e(9, -10.0);
  s[1 + 3] = 5.0;
  e[1 + 5] = 5.0;
  auto a = predict_answer(logits_from(s, e), doc(8));
  EXPECT_FALSE(a.is_no_answer);
  EXPECT_EQ(a.start_token, 3u);
  EXPECT_EQ(a.end_token, 5u);
  EXPECT_EQ(a.text, "w3 w4 w5");
  EXPECT_DOUBLE_EQ(a.score, 10.0);
}

TEST(PredictAnswer, NeverReturnsEndBeforeStart) {
  std::vector<double> s(9, -10.0), e(9, -10.0);
  s[1 + 5] = 5.0;
  e[1 + 3] = 5.0;
  auto a = predict_answer(logits_from(s, e), doc(8));
  EXPECT_LE(a.start_token, a.end_token);
  // best admissible pairs score -5; (0,3) comes first
  EXPECT_DOUBLE_EQ(a.score, -5.0);
  EXPECT_EQ(a.start_token, 0u);
  EXPECT_EQ(a.end_token, 3u);
}

TEST(PredictAnswer, TiesGoToSmallerStartThenSmallerEnd) {
  std::vector<double> s(9, -10.0), e(9, -10.0);
  s[1 + 2] = 1.0;
  e[1 + 4] = 1.0;
  e[1 + 5] = 1.0;
  auto a = predict_answer(logits_from(s, e), doc(8));
  EXPECT_EQ(a.start_token, 2u);
  EXPECT_EQ(a.end_token, 4u);
}

TEST(PredictAnswer, SentinelWinsOnlyWhenStrictlyBetter) {
  std::vector<double> s(4, 0.0), e(4, 0.0);
  auto tie = predict_answer(logits_from(s, e), doc(3));
  EXPECT_FALSE(tie.is_no_answer);
  s[0] = 0.5;
  auto na = predict_answer(logits_from(s, e), doc(3));
  EXPECT_TRUE(na.is_no_answer);
}

TEST(PredictAnswer, RespectsMaxAnswerLength) {
  std::vector<double> s(9, -10.0), e(9, -10.0);
  s[1 + 0] = 5.0;
  e[1 + 7] = 5.0;
  auto a = predict_answer(logits_from(s, e), doc(8), 3);
  EXPECT_LT(a.end_token - a.start_token, 3u);
}

TEST(PredictAnswer, RandomLogitsAlwaysSatisfyTheSpanInvariants) {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 20;
    const int max_len = 1 + static_cast<int>(rng() % 6);
    auto s = random_tensor({n + 1}, rng());
    auto e = random_tensor({n + 1}, rng());
    SpanLogits l{s, e, 1, n};
    auto a = predict_answer(l, doc(n), max_len);
    if (a.is_no_answer) continue;
    EXPECT_LE(a.start_token, a.end_token);
    EXPECT_LT(a.end_token, n);
    EXPECT_LT(a.end_token - a.start_token, static_cast<std::size_t>(max_len));
  }
}

TEST(PredictAnswer, EmptyDocumentIsAContractError) {
  SpanLogits l{Tensor::vector({0.0}), Tensor::vector({0.0}), 1, 0};
  EXPECT_THROW(predict_answer(l, {}), ContractError);
}
