#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "aapool/training.hpp"
#include "test_util.hpp"

using namespace aapool;
using namespace aapool::training;

namespace {

// Two classes separated by overall level (+1 or -1) under Gaussian noise.
std::vector<data::Clip> toy_clips(std::size_t n, std::uint64_t seed, std::size_t frames = frontend::kPatchFrames) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> noise(0.0f, 0.3f);
  std::vector<data::Clip> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % 2;
    std::vector<float> v(frames * frontend::kBands);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t b = 0; b < frontend::kBands; ++b) v[t * frontend::kBands + b] = (label == 0 ? 1.0f : -1.0f) + noise(rng);
    }
    frontend::LogMelSpec spec;
    spec.frames = frames;
    spec.values = Tensor({frames, frontend::kBands}, std::move(v));
    spec.sample_rate = 16000;
    out.push_back(data::make_clip("toy_" + std::to_string(i), label, 2, std::move(spec)));
  }
  return out;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.lr = 3e-3;
  c.batch_size = 8;
  c.max_epochs = 6;
  c.seed = 4;
  return c;
}

}  // namespace

TEST(Bce, HalfEverywhereIsLn2) {
  Tensor s({3, 4}, 0.5f), t({3, 4}, 0.5f);
  EXPECT_NEAR(bce_loss(s, t).item(), std::log(2.0), 1e-6);
  Tensor t01({3, 4}, 1.0f);
  EXPECT_NEAR(bce_loss(s, t01).item(), std::log(2.0), 1e-6);
}

TEST(Bce, ExactMatchIsNearZero) {
  Tensor s({2, 2}, std::vector<float>{1, 0, 0, 1}), t({2, 2}, std::vector<float>{1, 0, 0, 1});
  EXPECT_LT(bce_loss(s, t).item(), 1e-6);
}

TEST(Bce, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  auto s = aapool::testing::random_tensor<double>({4, 3}, rng, 0.05, 0.95, true);
  auto t = aapool::testing::random_tensor<double>({4, 3}, rng, 0.0, 1.0);
  backward(bce_loss(s, t));
  const auto g = std::vector<double>(s.grad().begin(), s.grad().end());
  for (std::size_t i = 0; i < s.numel(); ++i) {
    const double h = 1e-6, x = s[i];
    s[i] = x + h;
    const double up = bce_loss(s, t).item();
    s[i] = x - h;
    const double dn = bce_loss(s, t).item();
    s[i] = x;
    EXPECT_LT(aapool::testing::rel_err(g[i], (up - dn) / (2 * h)), 1e-4) << i;
  }
}

TEST(Bce, ShapeMismatchThrows) {
  EXPECT_THROW(bce_loss(Tensor({2, 2}, 0.5f), Tensor({2, 3}, 0.5f)), DimensionError);
}

TEST(Mixup, BetaSymmetricMean) {
  std::mt19937_64 rng(2);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double l = sample_beta(1.25, 1.25, rng);
    ASSERT_GE(l, 0.0);
    ASSERT_LE(l, 1.0);
    sum += l;
  }
  EXPECT_NEAR(sum / n, 0.5, 0.01);
}

TEST(Mixup, ForcedLambdaOneAndZero) {
  std::mt19937_64 rng(3);
  auto x = aapool::testing::random_tensor({4, 1, 3, 2}, rng);
  Tensor y({4, 2}, std::vector<float>{1, 0, 0, 1, 1, 0, 0, 1});
  auto draws = draw_mixup(4, 1.25, rng);
  for (auto& d : draws) d.lambda = 1.0f;
  auto [x1, y1] = apply_mixup(x, y, draws);
  EXPECT_EQ(std::vector<float>(x1.data().begin(), x1.data().end()), std::vector<float>(x.data().begin(), x.data().end()));
  EXPECT_EQ(std::vector<float>(y1.data().begin(), y1.data().end()), std::vector<float>(y.data().begin(), y.data().end()));
  for (auto& d : draws) d.lambda = 0.0f;
  auto [x0, y0] = apply_mixup(x, y, draws);
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t j = draws[i].partner;
    for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(x0[i * 6 + k], x[j * 6 + k]);
    for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(y0[i * 2 + k], y[j * 2 + k]);
  }
}

TEST(Mixup, HalfLambdaAveragesInputsAndLabels) {
  Tensor x({2, 1, 2, 2}, std::vector<float>{0, 0, 0, 0, 2, 2, 2, 2});
  Tensor y({2, 2}, std::vector<float>{1, 0, 0, 1});
  std::vector<MixupDraw> draws{{0.5f, 1}, {0.5f, 0}};
  auto [xm, ym] = apply_mixup(x, y, draws);
  for (float v : xm.data()) EXPECT_FLOAT_EQ(v, 1.0f);
  for (float v : ym.data()) EXPECT_FLOAT_EQ(v, 0.5f);
}

TEST(Mixup, SoftTargetsStayInRangeAndKeepRowSums) {
  std::mt19937_64 rng(8);
  const std::size_t n = 16, c = 5;
  std::vector<float> yv(n * c, 0.0f);
  for (std::size_t i = 0; i < n; ++i) yv[i * c + rng() % c] = 1.0f;
  Tensor y({n, c}, yv);
  auto x = aapool::testing::random_tensor({n, 1, 2, 2}, rng);
  auto [xm, ym] = mixup_batch(x, y, 1.25, rng);
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0;
    for (std::size_t k = 0; k < c; ++k) {
      EXPECT_GE(ym[i * c + k], 0.0f);
      EXPECT_LE(ym[i * c + k], 1.0f);
      row += ym[i * c + k];
    }
    EXPECT_NEAR(row, 1.0, 1e-6);
  }
  EXPECT_THROW(mixup_batch(x, y, 0.0, rng), ArgumentError);
}

TEST(Adam, FirstStepMovesByLrTimesSign) {
  std::vector<model::NamedTensor<double>> params{{"w", Tensor64({3}, std::vector<double>{1, 2, 3}, true)}};
  Adam<double> opt(params);
  auto loss = sum(mul(params[0].tensor, Tensor64({3}, std::vector<double>{2, -3, 0.5})));
  backward(loss);
  opt.step(0.1);
  EXPECT_NEAR(params[0].tensor[0], 0.9, 1e-6);
  EXPECT_NEAR(params[0].tensor[1], 2.1, 1e-6);
  EXPECT_NEAR(params[0].tensor[2], 2.9, 1e-6);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Config, ValidationAndJson) {
  TrainConfig c;
  c.lr = -1;
  c.plateau_patience = 0;
  c.mixup_alpha = 0.0;
  EXPECT_EQ(validate(c).size(), 3u);
  const auto p = TrainConfig::paper();
  EXPECT_DOUBLE_EQ(p.lr, 3e-5);
  EXPECT_EQ(p.batch_size, 128u);
  EXPECT_EQ(p.max_epochs, 150u);
  EXPECT_DOUBLE_EQ(*p.mixup_alpha, 1.25);
  const auto back = train_config_from_json(to_json(p));
  EXPECT_EQ(to_json(back), to_json(p));
  EXPECT_THROW(train_config_from_json(nlohmann::json{{"lr", "fast"}}), ConfigError);
}

TEST(Train, FrozenParametersStopAfterTwoEpochs) {
  const auto tr = toy_clips(8, 1), va = toy_clips(4, 2);
  model::Network<float> net(model::ModelConfig::micro(2), 0);
  auto cfg = quick_config();
  cfg.lr = 0.0;
  cfg.bn_momentum = 0.0;
  cfg.earlystop_patience = 1;
  const auto r = train(net, tr, va, cfg);
  EXPECT_TRUE(r.early_stopped);
  EXPECT_EQ(r.history.size(), 2u);
  EXPECT_EQ(r.best.epoch, 1u);
}

TEST(Train, LearnsSeparableToyTask) {
  const auto tr = toy_clips(32, 3), va = toy_clips(8, 4);
  model::Network<float> net(model::ModelConfig::micro(2), 1);
  auto cfg = quick_config();
  const auto r = train(net, tr, va, cfg);
  ASSERT_EQ(r.history.size(), cfg.max_epochs);
  EXPECT_LT(r.history[4].train_loss, r.history[0].train_loss);
  for (std::size_t e = 1; e < 5; ++e) EXPECT_LT(r.history[e].train_loss, r.history[e - 1].train_loss * 1.1) << e;
  auto best = model::restore(r.best);
  EXPECT_GT(metrics::top1_accuracy(predict_clips(best, tr)), 0.95);
  // Best-checkpoint invariant.
  double mx = 0;
  for (const auto& h : r.history) mx = std::max(mx, h.val_map);
  EXPECT_DOUBLE_EQ(r.best.val_history.back(), mx);
  EXPECT_FALSE(r.best.optimizer.empty());
}

TEST(Train, SameSeedSameHistory) {
  const auto tr = toy_clips(8, 5), va = toy_clips(4, 6);
  auto cfg = quick_config();
  cfg.max_epochs = 2;
  cfg.mixup_alpha = 1.25;
  model::Network<float> a(model::ModelConfig::micro(2), 2), b(model::ModelConfig::micro(2), 2);
  const auto ra = train(a, tr, va, cfg), rb = train(b, tr, va, cfg);
  ASSERT_EQ(ra.history.size(), rb.history.size());
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    EXPECT_EQ(ra.history[i].train_loss, rb.history[i].train_loss);
    EXPECT_EQ(ra.history[i].val_map, rb.history[i].val_map);
  }
  EXPECT_EQ(history_csv(ra.history), history_csv(rb.history));
}

TEST(Schedule, HalvesExactlyAtPlateausAndStops) {
  PlateauSchedule s(1.0, 2, 5, 1e-4);
  using E = PlateauSchedule::Event;
  EXPECT_EQ(s.update(0.5), E::Improved);
  EXPECT_EQ(s.update(0.50005), E::None);  // below the improvement threshold
  EXPECT_EQ(s.update(0.4), E::Halved);
  EXPECT_DOUBLE_EQ(s.lr(), 0.5);
  EXPECT_EQ(s.update(0.6), E::Improved);
  EXPECT_DOUBLE_EQ(s.lr(), 0.5);
  EXPECT_EQ(s.update(0.6), E::None);
  EXPECT_EQ(s.update(0.6), E::Halved);
  EXPECT_EQ(s.update(0.6), E::None);
  EXPECT_EQ(s.update(0.6), E::Halved);
  EXPECT_DOUBLE_EQ(s.lr(), 0.125);
  EXPECT_EQ(s.update(0.6), E::Stop);
  EXPECT_DOUBLE_EQ(s.best(), 0.6);
}

TEST(Schedule, LrSequenceNonIncreasing) {
  std::mt19937_64 rng(12);
  PlateauSchedule s(1e-3, 3, 1000, 1e-4);
  double prev = s.lr();
  for (int i = 0; i < 200; ++i) {
    const auto e = s.update(std::uniform_real_distribution<double>(0, 1)(rng));
    EXPECT_LE(s.lr(), prev);
    if (e == PlateauSchedule::Event::Halved) EXPECT_DOUBLE_EQ(s.lr(), prev / 2);
    else EXPECT_DOUBLE_EQ(s.lr(), prev);
    prev = s.lr();
  }
}

TEST(Train, RejectsBadInput) {
  const auto tr = toy_clips(4, 9);
  model::Network<float> net(model::ModelConfig::micro(2), 0);
  auto cfg = quick_config();
  EXPECT_THROW(train(net, tr, {}, cfg), ArgumentError);
  cfg.batch_size = 0;
  EXPECT_THROW(train(net, tr, tr, cfg), ConfigError);
  auto bad = toy_clips(4, 10);
  bad[1].spec.values[7] = std::nanf("");
  EXPECT_THROW(train(net, bad, tr, quick_config()), DivergenceError);
}
