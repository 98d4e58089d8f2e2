#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "ddnet/checkpoint.hpp"
#include "ddnet/distill.hpp"
#include "ddnet/errors.hpp"
#include "ddnet/evaluation.hpp"
#include "support/fixture.hpp"

using namespace ddnet;
using ddnet::testing::make_corpus;
using ddnet::testing::random_tensor;
using ddnet::testing::tiny_model_config;

namespace {

KDConfig kd(double alpha, double tau) {
  KDConfig c;
  c.alpha = alpha;
  c.tau = tau;
  return c;
}

KDConfig quick_train(int steps, std::uint64_t seed = 5) {
  KDConfig c;
  c.learning_rate = 1e-3;
  c.batch_size = 4;
  c.max_steps = steps;
  c.seed = seed;
  return c;
}

SpanLogits span_logits(std::vector<double> s, std::vector<double> e) {
  SpanLogits l;
  l.doc_offset = 3;
  l.doc_len = s.size() - 1;
  l.start = Tensor::vector(std::move(s), true);
  l.end = Tensor::vector(std::move(e), true);
  return l;
}

// Reference computation with plain doubles, kept apart from the library.
double reference_head(const std::vector<double>& zs, const std::vector<double>& zt, std::size_t y, double alpha,
                      double tau) {
  auto softmax = [](std::vector<double> z, double t) {
    double m = *std::max_element(z.begin(), z.end()), s = 0.0;
    for (auto& v : z) s += (v = std::exp((v - m) / t));
    for (auto& v : z) v /= s;
    return z;
  };
  const auto ps = softmax(zs, tau), pt = softmax(zt, tau), p1 = softmax(zs, 1.0);
  double kl = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) kl += ps[i] * std::log(ps[i] / pt[i]);
  return alpha * tau * tau * kl + (1 - alpha) * -std::log(p1[y]);
}

}  // namespace

TEST(KdLoss, HandDerivedTwoClassCase) {
  auto zs = Tensor::vector({1, 0}, true);
  auto zt = Tensor::vector({0, 1});
  const double loss = kd_head_loss(zs, zt, 0, kd(0.9, 2.0)).item();
  EXPECT_NEAR(loss, 0.4722, 1e-3);
  EXPECT_NEAR(loss, reference_head({1, 0}, {0, 1}, 0, 0.9, 2.0), 1e-12);
  // both heads identical: the average is the same number
  auto s = span_logits({1, 0}, {1, 0});
  auto t = span_logits({0, 1}, {0, 1});
  EXPECT_NEAR(kd_loss(s, t, 0, 0, kd(0.9, 2.0)).item(), loss, 1e-15);
}

TEST(KdLoss, IdenticalLogitsWithAlphaOneIsExactlyZero) {
  auto s = span_logits({0.3, -1.2, 2.5, 0.0}, {1.0, 1.0, -3.0, 0.5});
  EXPECT_EQ(kd_loss(s, s, 1, 2, kd(1.0, 2.0)).item(), 0.0);
  EXPECT_EQ(kd_loss(s, s, 1, 2, kd(1.0, 7.5)).item(), 0.0);
}

TEST(KdLoss, AlphaZeroTauOneIsMeanCrossEntropy) {
  auto s = span_logits({0.3, -1.2, 2.5, 0.0}, {1.0, 1.0, -3.0, 0.5});
  auto t = span_logits({9, 9, 9, 9}, {0, 0, 0, 0});
  const double expected = 0.5 * (cross_entropy(s.start, 1).item() + cross_entropy(s.end, 3).item());
  EXPECT_EQ(kd_loss(s, t, 1, 3, kd(0.0, 1.0)).item(), expected);
}

TEST(KdLoss, MatchesReferenceAcrossTheGridAndIsNonNegative) {
  Rng rng(3);
  for (double alpha : {0.0, 0.1, 0.5, 0.9, 1.0})
    for (double tau : {0.5, 1.0, 2.0, 4.0, 10.0}) {
      std::vector<double> zs(6), zt(6);
      std::normal_distribution<double> n(0, 2);
      for (auto& v : zs) v = n(rng);
      for (auto& v : zt) v = n(rng);
      const double got = kd_head_loss(Tensor::vector(zs), Tensor::vector(zt), 4, kd(alpha, tau)).item();
      EXPECT_NEAR(got, reference_head(zs, zt, 4, alpha, tau), 1e-10);
      EXPECT_GE(got, 0.0);
    }
}

TEST(KdLoss, KlDirectionAndTeacherLiteralTarget) {
  auto zs = Tensor::vector({1, 0, 0.5}, true);
  auto zt = Tensor::vector({0, 1, -0.5});
  auto cfg = kd(1.0, 2.0);
  const double fwd = kd_head_loss(zs, zt, 0, cfg).item();
  cfg.kl_direction = KLDirection::teacher_first;
  const double rev = kd_head_loss(zs, zt, 0, cfg).item();
  EXPECT_NEAR(rev, 4.0 * kl_divergence(zt, zs, 2.0).item(), 1e-12);
  EXPECT_NE(fwd, rev);
  auto lit = kd(0.0, 1.0);
  lit.hard_target = HardTarget::teacher_literal;
  EXPECT_NEAR(kd_head_loss(zs, zt, 0, lit).item(), cross_entropy(zt, 0).item(), 1e-12);
}

TEST(KdLoss, ContinuousInAlphaAndTau) {
  auto zs = Tensor::vector({1, -0.5, 0.2});
  auto zt = Tensor::vector({-0.3, 0.8, 0.0});
  for (double a = 0.0; a < 0.95; a += 0.1) {
    const double l0 = kd_head_loss(zs, zt, 1, kd(a, 2.0)).item();
    const double l1 = kd_head_loss(zs, zt, 1, kd(a + 1e-7, 2.0)).item();
    EXPECT_NEAR(l0, l1, 1e-5);
  }
  for (double t = 0.5; t < 10.0; t += 0.5) {
    const double l0 = kd_head_loss(zs, zt, 1, kd(0.9, t)).item();
    const double l1 = kd_head_loss(zs, zt, 1, kd(0.9, t + 1e-7)).item();
    EXPECT_NEAR(l0, l1, 1e-5);
  }
}

TEST(KdLoss, TeacherIsDetached) {
  auto zs = Tensor::vector({1, 0, 2}, true);
  auto zt = Tensor::vector({0, 1, 0}, true);
  Tape tape;
  tape.backward(kd_head_loss(zs, zt, 0, kd(0.9, 2.0)));
  EXPECT_TRUE(zs.has_grad());
  EXPECT_FALSE(zt.has_grad());
}

TEST(KdLoss, HighTemperatureGradientSettles) {
  // with alpha=1, tau^2 * KL has gradient ~ (zs - zt - mean) / n for large tau
  auto grad_norm = [](double tau) {
    auto zs = Tensor::vector({1.5, -0.5, 0.25, 2.0}, true);
    auto zt = Tensor::vector({-1.0, 0.5, 1.0, 0.0});
    Tape tape;
    tape.backward(kd_head_loss(zs, zt, 0, kd(1.0, tau)));
    double s = 0.0;
    for (double g : zs.grad()) s += g * g;
    return std::sqrt(s);
  };
  const double g50 = grad_norm(50.0), g100 = grad_norm(100.0);
  EXPECT_LT(std::abs(g50 - g100) / g100, 0.10);
  // the softened KL itself vanishes; tau^2 * KL settles near a positive constant
  auto kl = [](double tau) {
    return kl_divergence(Tensor::vector({1.5, -0.5, 0.25, 2.0}), Tensor::vector({-1.0, 0.5, 1.0, 0.0}), tau).item();
  };
  EXPECT_LT(kl(100.0), kl(50.0));
  EXPECT_LT(kl(100.0), 1e-3);
}

TEST(KdLoss, BadArgumentsRaiseTheirErrors) {
  auto a = Tensor::vector({1, 0});
  auto b = Tensor::vector({1, 0, 0});
  EXPECT_THROW(kd_head_loss(a, b, 0, kd(0.5, 2)), DimensionError);
  EXPECT_THROW(kd_head_loss(a, a, 2, kd(0.5, 2)), BoundsError);
  EXPECT_THROW(kd_head_loss(a, a, 0, kd(1.5, 2)), ParameterError);
  EXPECT_THROW(kd_head_loss(a, a, 0, kd(0.5, 0)), ParameterError);
}

TEST(ProjectTeacherLogits, FollowsTheAlignment) {
  auto t = span_logits({5, 1, 2, 3}, {6, -1, -2, -3});
  const std::vector<long> asr_to_clean{2, -1, 0};
  auto p = project_teacher_logits(t, asr_to_clean);
  ASSERT_EQ(p.start.numel(), 4u);
  EXPECT_EQ(p.start[0], 5.0);
  EXPECT_EQ(p.start[1], 3.0);
  EXPECT_EQ(p.start[2], 1.0);  // inserted word gets the minimum document logit
  EXPECT_EQ(p.start[3], 1.0);
  EXPECT_EQ(p.end[2], -3.0);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  NamedParameters params{{"w", random_tensor({3, 2}, 1, 1.0, true)}, {"b", Tensor::zeros({2}, true)}};
  const std::vector<double> before(params[0].second.data().begin(), params[0].second.data().end());
  Adam opt(params, KDConfig{});
  for (int i = 0; i < 5; ++i) opt.step();
  EXPECT_EQ(std::vector<double>(params[0].second.data().begin(), params[0].second.data().end()), before);
  EXPECT_EQ(opt.steps(), 5);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstTheGradient) {
  auto w = Tensor::vector({1.0, -2.0}, true);
  KDConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.clip_norm = 0.0;
  Adam opt({{"w", w}}, cfg);
  {
    Tape tape;
    tape.backward(sum(mul(w, w)));
  }
  opt.step();
  EXPECT_NEAR(w[0], 0.9, 1e-6);
  EXPECT_NEAR(w[1], -1.9, 1e-6);
  EXPECT_FALSE(w.has_grad());
}

TEST(KDConfig, DefaultsJsonAndValidation) {
  KDConfig c;
  EXPECT_EQ(c.alpha, 0.9);
  EXPECT_EQ(c.tau, 2.0);
  EXPECT_EQ(kd_config_from_json(to_json(c)), c);
  auto j = to_json(c);
  j["lr"] = 1;
  EXPECT_THROW(kd_config_from_json(j), ConfigError);
  EXPECT_THROW(parse_kl_direction("sideways"), ConfigError);
}

class Training : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { corpus_ = new ddnet::testing::Corpus(make_corpus(10, 21)); }
  static void TearDownTestSuite() { delete corpus_; }
  static const ddnet::testing::Corpus& corpus() { return *corpus_; }
  static ddnet::testing::Corpus* corpus_;
};
ddnet::testing::Corpus* Training::corpus_ = nullptr;

TEST_F(Training, TeacherStepZeroLossIsNearUniformEntropy) {
  QAModel m(tiny_model_config(corpus()));
  double expected = 0.0;
  std::size_t count = 0;
  for (const auto& ex : corpus().examples) {
    expected += std::log(static_cast<double>(ex.clean.doc_len + 1));
    ++count;
  }
  expected /= static_cast<double>(count);
  auto cfg = quick_train(1);
  cfg.batch_size = static_cast<int>(count);
  auto r = train_teacher(m, corpus().examples, cfg);
  ASSERT_EQ(r.losses.size(), 1u);
  EXPECT_NEAR(r.losses[0], expected, 0.2 * expected);
}

TEST_F(Training, FixedSeedGivesIdenticalLossCurves) {
  QAModel a(tiny_model_config(corpus())), b(tiny_model_config(corpus()));
  auto ra = train_teacher(a, corpus().examples, quick_train(8));
  auto rb = train_teacher(b, corpus().examples, quick_train(8));
  EXPECT_EQ(ra.losses, rb.losses);
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  EXPECT_EQ(ra.to_json().dump(), rb.to_json().dump());
  EXPECT_EQ(ra.config, to_json(quick_train(8)));
}

TEST_F(Training, LossDecreasesOnTheTrainingSet) {
  QAModel m(tiny_model_config(corpus()));
  auto r = train_teacher(m, corpus().examples, quick_train(60));
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 10; ++i) {
    head += r.losses[static_cast<std::size_t>(i)];
    tail += r.losses[r.losses.size() - 1 - static_cast<std::size_t>(i)];
  }
  EXPECT_LT(tail, head);
}

TEST_F(Training, StudentWithAlphaZeroMatchesTeacherTrainingOnTheAsrView) {
  QAModel teacher(tiny_model_config(corpus(), 16, 1, 2, 77));
  QAModel s1(tiny_model_config(corpus())), s2(tiny_model_config(corpus()));
  auto cfg = quick_train(6);
  cfg.alpha = 0.0;
  auto a = train_student(s1, teacher, corpus().examples, cfg);
  auto b = train_teacher(s2, corpus().examples, cfg, {}, View::asr);
  EXPECT_EQ(a.losses, b.losses);
  EXPECT_EQ(s1.fingerprint(), s2.fingerprint());
}

TEST_F(Training, TeacherStaysFrozen) {
  QAModel teacher(tiny_model_config(corpus(), 16, 1, 2, 77));
  const auto before = teacher.fingerprint();
  const auto path = std::filesystem::temp_directory_path() / "ddnet_distill_teacher.ckpt";
  save_model(path, teacher);
  QAModel student(tiny_model_config(corpus()));
  auto r = train_student(student, teacher, corpus().examples, quick_train(5));
  EXPECT_EQ(teacher.fingerprint(), before);
  EXPECT_EQ(load_model(path).fingerprint(), before);
  EXPECT_EQ(r.losses.size(), 5u);
  for (const auto& [name, t] : teacher.parameters()) EXPECT_FALSE(t.has_grad()) << name;
}

TEST_F(Training, MissingAsrViewIsADataError) {
  std::vector<Example> data(corpus().examples.begin(), corpus().examples.begin() + 3);
  data[1].asr.reset();
  QAModel teacher(tiny_model_config(corpus()));
  QAModel student(tiny_model_config(corpus()));
  EXPECT_THROW(train_student(student, teacher, data, quick_train(1)), DataError);
  EXPECT_THROW(train_teacher(student, {}, quick_train(1)), ContractError);
}

TEST_F(Training, ResumedRunContinuesWithIdenticalLosses) {
  const auto path = std::filesystem::temp_directory_path() / "ddnet_resume.ckpt";
  auto cfg = quick_train(10);
  QAModel full(tiny_model_config(corpus()));
  auto straight = train_teacher(full, corpus().examples, cfg);

  QAModel first(tiny_model_config(corpus()));
  TrainHooks stop;
  stop.checkpoint_path = path;
  stop.stop_when = [](const TrainReport& r) { return r.steps == 4; };
  auto part = train_teacher(first, corpus().examples, cfg, stop);
  EXPECT_TRUE(part.stopped_early);
  ASSERT_EQ(part.losses.size(), 4u);

  QAModel second(tiny_model_config(corpus(), 16, 1, 2, 999));
  TrainHooks resume;
  resume.resume_from = path;
  auto rest = train_teacher(second, corpus().examples, cfg, resume);
  EXPECT_EQ(rest.losses, straight.losses);
  EXPECT_EQ(second.fingerprint(), full.fingerprint());

  auto other = cfg;
  other.learning_rate = 5e-4;
  EXPECT_THROW(train_teacher(second, corpus().examples, other, resume), ConfigError);
}

TEST_F(Training, PeriodicEvaluationIsRecorded) {
  QAModel m(tiny_model_config(corpus()));
  m.tokenizer_fingerprint = corpus().tokenizer.fingerprint();
  auto cfg = quick_train(7);
  cfg.eval_every = 3;
  TrainHooks hooks;
  hooks.dev = corpus().examples;
  hooks.tokenizer = &corpus().tokenizer;
  auto r = train_teacher(m, corpus().examples, cfg, hooks);
  ASSERT_EQ(r.evals.size(), 3u);
  EXPECT_EQ(r.evals[0].step, 3);
  EXPECT_EQ(r.evals[1].step, 6);
  EXPECT_EQ(r.evals[2].step, 7);
}

TEST_F(Training, AblationHarnessRowsAndTransparency) {
  QAModel teacher(tiny_model_config(corpus(), 16, 1, 2, 77));
  auto cfg = quick_train(3);
  AblationSetup setup;
  setup.student_config = tiny_model_config(corpus());
  setup.teacher = &teacher;
  setup.train = corpus().examples;
  setup.tokenizer = &corpus().tokenizer;
  setup.eval_splits = {{"dev", std::span<const Example>(corpus().examples).first(10)},
                       {"test", std::span<const Example>(corpus().examples).last(10)}};

  auto grid = ablate_temperature(kDefaultTemperatureGrid, cfg, setup);
  EXPECT_EQ(grid.rows.size(), 12u);
  const std::string dev_csv = grid.to_csv("dev");
  EXPECT_EQ(std::count(dev_csv.begin(), dev_csv.end(), '\n'), 7);
  EXPECT_EQ(grid.to_csv(), ablate_temperature(kDefaultTemperatureGrid, cfg, setup).to_csv());

  const double two[] = {2.0};
  auto single = ablate_temperature(two, cfg, setup);
  QAModel direct(tiny_model_config(corpus()));
  auto direct_cfg = cfg;
  direct_cfg.tau = 2.0;
  auto r = train_student(direct, teacher, corpus().examples, direct_cfg);
  ASSERT_EQ(single.fingerprints.size(), 1u);
  EXPECT_EQ(single.fingerprints[0].second, r.model_fingerprint);
  auto e = evaluate(direct, setup.eval_splits[0].examples, corpus().tokenizer, View::asr, "dev");
  EXPECT_EQ(single.rows[0].f1, e.f1);
  EXPECT_EQ(single.rows[0].em, e.em);

  auto fusion = ablate_fusion(kAllFusionModes, cfg, setup);
  EXPECT_EQ(fusion.rows.size(), 8u);
  EXPECT_EQ(fusion.rows[0].grid_key, "cross_attention");
}

TEST_F(Training, BestTemperatureIsArgmaxWithTiesToTheSmallerTau) {
  QAModel teacher(tiny_model_config(corpus(), 16, 1, 2, 77));
  AblationSetup setup;
  setup.student_config = tiny_model_config(corpus());
  setup.teacher = &teacher;
  setup.train = corpus().examples;
  setup.tokenizer = &corpus().tokenizer;
  setup.eval_splits = {{"dev", std::span<const Example>(corpus().examples).first(12)}};
  // zero steps: every student is the same untrained model, so every row ties
  auto cfg = quick_train(0);
  const double taus[] = {8.0, 1.0, 4.0};
  auto tied = ablate_temperature(taus, cfg, setup);
  EXPECT_EQ(tied.best_key, "1");

  auto res = ablate_temperature(std::span<const double>(kDefaultTemperatureGrid).first(3), quick_train(4), setup);
  double best = -1.0;
  std::string key;
  for (const auto& row : res.rows)
    if (row.f1 > best) best = row.f1, key = row.grid_key;
  EXPECT_EQ(res.best_key, key);
}
