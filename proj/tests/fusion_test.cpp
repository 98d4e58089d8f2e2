#include <gtest/gtest.h>

#include "ddnet/errors.hpp"
#include "ddnet/fusion.hpp"
#include "support/fixture.hpp"

using namespace ddnet;
using ddnet::testing::random_tensor;

namespace {

void make_identity(MultiHeadAttention& mha, std::size_t d) {
  for (Linear* l : {&mha.query, &mha.key, &mha.value, &mha.output}) {
    for (auto& x : l->weight.mutable_data()) x = 0.0;
    for (std::size_t i = 0; i < d; ++i) l->weight.mutable_data()[i * d + i] = 1.0;
    for (auto& x : l->bias.mutable_data()) x = 0.0;
  }
}

void expect_near(const Tensor& a, const Tensor& b, double tol = 1e-12) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "at " << i;
}

}  // namespace

TEST(FusionMode, NamesRoundTrip) {
  for (auto m : kAllFusionModes) EXPECT_EQ(parse_fusion_mode(to_string(m)), m);
  EXPECT_THROW(parse_fusion_mode("late_fusion"), ConfigError);
}

TEST(CrossAttention, CollapsedModalitiesGiveSelfAttention) {
  Initializer init(1);
  CoAttention block(4, 2, init);
  make_identity(block.speech_queries_text, 4);
  make_identity(block.text_queries_speech, 4);
  auto x = random_tensor({5, 4}, 7);
  auto [s_cross, x_cross] = cross_attention(block, x, x);
  auto self = attend(x, x, x, 2);
  expect_near(s_cross, self);
  expect_near(x_cross, self);
}

TEST(CrossAttention, SingleSpeechVectorIsBroadcast) {
  Initializer init(2);
  CoAttention block(4, 2, init);
  auto s = random_tensor({1, 4}, 8);
  auto x = random_tensor({6, 4}, 9);
  auto [s_cross, x_cross] = cross_attention(block, s, x);
  EXPECT_EQ(s_cross.shape(), (Shape{1, 4}));
  EXPECT_EQ(x_cross.shape(), (Shape{6, 4}));
  // the projected single speech vector: output(value(s))
  const auto& tqs = block.text_queries_speech;
  auto expected = tqs.output(tqs.value(s));
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(x_cross.at(r, c), expected.at(0, c), 1e-12);
}

TEST(CrossAttention, TwoTokenHandCase) {
  Initializer init(3);
  CoAttention block(1, 1, init);
  make_identity(block.speech_queries_text, 1);
  make_identity(block.text_queries_speech, 1);
  auto s = Tensor::matrix(2, 1, {2, 0});
  auto x = Tensor::matrix(2, 1, {1, 0});
  // text queries speech: row 0 weights softmax(2, 0), values [2, 0]
  auto [s_cross, x_cross] = cross_attention(block, s, x);
  const double e2 = std::exp(2.0);
  EXPECT_NEAR(x_cross[0], 2.0 * e2 / (e2 + 1.0), 1e-12);
  EXPECT_NEAR(x_cross[1], 1.0, 1e-12);
  // speech queries text, row 0: softmax(2, 0) over values [1, 0]
  EXPECT_NEAR(s_cross[0], e2 / (e2 + 1.0), 1e-12);
}

TEST(CrossAttention, InvariantToKeyModalityPermutation) {
  Initializer init(4);
  CoAttention block(4, 2, init);
  auto s = random_tensor({5, 4}, 10);
  auto x = random_tensor({3, 4}, 11);
  const std::vector<std::size_t> perm{4, 2, 0, 3, 1};
  auto a = cross_attention(block, s, x).second;
  auto b = cross_attention(block, gather_rows(s, perm), x).second;
  expect_near(a, b);
}

TEST(CrossAttention, EmptyModalityIsAContractError) {
  Initializer init(5);
  CoAttention block(4, 2, init);
  EXPECT_THROW(cross_attention(block, Tensor::zeros({0, 4}), random_tensor({2, 4}, 1)), ContractError);
  EXPECT_THROW(cross_attention(block, random_tensor({2, 4}, 1), Tensor::zeros({0, 4})), ContractError);
}

TEST(Fuse, TextOnlyWithZeroTextAppendsZeros) {
  auto enc = random_tensor({3, 4}, 12);
  auto f = fuse(enc, random_tensor({2, 4}, 13), Tensor::zeros({3, 4}), FusionMode::text_only);
  ASSERT_EQ(f.sequence.shape(), (Shape{3, 8}));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(f.sequence.at(r, c), c < 4 ? enc.at(r, c) : 0.0);
}

TEST(Fuse, SequenceLengthAndWidthAreUniformAcrossModes) {
  Initializer init(6);
  MultiHeadAttention tqs(4, 2, init);
  auto enc = random_tensor({7, 4}, 14);
  auto s = random_tensor({11, 4}, 15);
  auto x = random_tensor({7, 4}, 16);
  for (auto m : kAllFusionModes) {
    auto f = fuse(enc, s, x, m, &tqs);
    EXPECT_EQ(f.sequence.shape(), (Shape{7, 8})) << to_string(m);
    EXPECT_EQ(f.mode, m);
  }
}

TEST(Fuse, ConFusionOfIdenticalSpeechRowsAppendsThatRow) {
  auto enc = random_tensor({4, 3}, 17);
  auto s = Tensor::matrix(3, 3, {0.5, -1, 2, 0.5, -1, 2, 0.5, -1, 2});
  auto f = fuse(enc, s, random_tensor({4, 3}, 18), FusionMode::con_fusion);
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_DOUBLE_EQ(f.sequence.at(r, 3), 0.5);
    EXPECT_DOUBLE_EQ(f.sequence.at(r, 4), -1.0);
    EXPECT_DOUBLE_EQ(f.sequence.at(r, 5), 2.0);
  }
}

TEST(Fuse, ShapeInconsistenciesAreContractErrors) {
  auto enc = random_tensor({3, 4}, 19);
  EXPECT_THROW(fuse(enc, random_tensor({2, 4}, 1), random_tensor({2, 4}, 2), FusionMode::text_only), ContractError);
  EXPECT_THROW(fuse(enc, random_tensor({2, 5}, 1), random_tensor({3, 4}, 2), FusionMode::con_fusion), ContractError);
  EXPECT_THROW(fuse(enc, random_tensor({2, 4}, 1), random_tensor({3, 4}, 2), FusionMode::cross_attention),
               ContractError);
}

TEST(Fuse, EveryModePassesGradCheck) {
  Initializer init(7);
  MultiHeadAttention tqs(4, 2, init);
  auto enc = random_tensor({3, 4}, 20, 1.0, true);
  auto s = random_tensor({5, 4}, 21, 1.0, true);
  auto x = random_tensor({3, 4}, 22, 1.0, true);
  auto probe = random_tensor({3, 8}, 23);
  for (auto m : kAllFusionModes) {
    auto f = [&] { return sum(mul(fuse(enc, s, x, m, &tqs).sequence, probe)); };
    std::vector<Tensor> params{enc, s, x, tqs.query.weight, tqs.key.weight, tqs.value.weight, tqs.output.weight};
    EXPECT_LT(grad_check_params(f, params), 1e-4) << to_string(m);
  }
}

TEST(Fuse, IsDeterministic) {
  Initializer init(8);
  MultiHeadAttention tqs(4, 2, init);
  auto enc = random_tensor({3, 4}, 24);
  auto s = random_tensor({5, 4}, 25);
  auto x = random_tensor({3, 4}, 26);
  auto a = fuse(enc, s, x, FusionMode::cross_attention, &tqs).sequence;
  auto b = fuse(enc, s, x, FusionMode::cross_attention, &tqs).sequence;
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}
