#include <gtest/gtest.h>

#include <cmath>

#include "capsnoise/train.hpp"
#include "test_util.hpp"

namespace capsnoise {
namespace {

using test_support::tiny_capsnet_config;

TEST(Optimizer, AdamFirstStepIsLearningRateTimesSign) {
  Tensor p = Tensor::vector({1.0, 2.0, 3.0});
  const Tensor g = Tensor::vector({0.5, -4.0, 0.0});
  Optimizer opt({OptimizerKind::adam, 0.1});
  opt.step({&p}, {&g});
  EXPECT_NEAR(p[0], 0.9, 1e-8);
  EXPECT_NEAR(p[1], 2.1, 1e-8);
  EXPECT_EQ(p[2], 3.0);
}

TEST(Optimizer, SgdMomentumAccumulates) {
  Tensor p = Tensor::vector({1.0});
  const Tensor g = Tensor::vector({1.0});
  OptimizerSettings s;
  s.kind = OptimizerKind::sgd_momentum;
  s.learning_rate = 0.1;
  s.momentum = 0.5;
  Optimizer opt(s);
  opt.step({&p}, {&g});
  EXPECT_NEAR(p[0], 0.9, 1e-15);
  opt.step({&p}, {&g});
  EXPECT_NEAR(p[0], 0.9 - 0.15, 1e-15);
  EXPECT_EQ(parse_optimizer("sgd-momentum"), OptimizerKind::sgd_momentum);
  EXPECT_EQ(parse_optimizer("adam"), OptimizerKind::adam);
  EXPECT_THROW(parse_optimizer("rmsprop"), UsageError);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  const Dataset data = synth_dataset(4, 16, 0.1, 1);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.optimizer.learning_rate = 0.0;
  for (auto kind : {OptimizerKind::adam, OptimizerKind::sgd_momentum}) {
    cfg.optimizer.kind = kind;
    CapsNetModel caps = make_capsnet(tiny_capsnet_config(2));
    const CapsNetModel caps0 = caps;
    train(caps, data, cfg);
    EXPECT_EQ(caps, caps0);
    CnnModel cnn = make_matched_cnn(caps, 3);
    const CnnModel cnn0 = cnn;
    train(cnn, data, cfg);
    EXPECT_EQ(cnn, cnn0);
  }
}

TEST(Train, SameSeedIsBitwiseIdentical) {
  const Dataset data = synth_dataset(4, 16, 0.1, 1);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 3;
  cfg.seed = 17;
  CapsNetModel a = make_capsnet(tiny_capsnet_config(5)), b = a;
  const auto ra = train(a, data, cfg), rb = train(b, data, cfg);
  EXPECT_EQ(a, b);
  EXPECT_EQ(ra.epoch_loss, rb.epoch_loss);
  CnnModel c = make_matched_cnn(a, 6), d = c;
  train(c, data, cfg);
  train(d, data, cfg);
  EXPECT_EQ(c, d);
  cfg.seed = 18;
  CnnModel e = make_matched_cnn(a, 6);
  train(e, data, cfg);
  EXPECT_NE(c, e);
}

TEST(Train, RejectsInvalidConfigAndReportsDivergence) {
  const Dataset data = synth_dataset(2, 16, 0.1, 1);
  CapsNetModel m = make_capsnet(tiny_capsnet_config(1));
  TrainConfig cfg;
  cfg.batch_size = 0;
  EXPECT_THROW(train(m, data, cfg), UsageError);
  cfg.batch_size = 2;
  cfg.optimizer.learning_rate = -1;
  EXPECT_THROW(train(m, data, cfg), UsageError);
  cfg.optimizer.learning_rate = 1e-3;
  cfg.epochs = 1;
  m.params.W[0] = NAN;
  EXPECT_THROW(train(m, data, cfg), NumericError);
}

// Pinned regression: default-size capsule network on 100 synthetic beats.
TEST(Train, DeskRegressionCapsNet) {
  const Dataset data = synth_dataset(20, 64, 0.1, 31);
  CapsNetConfig mc;
  mc.seed = 32;
  CapsNetModel m = make_capsnet(mc);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.seed = 33;
  const TrainResult r = train(m, data, cfg);
  ASSERT_EQ(r.epoch_loss.size(), 30u);
  for (std::size_t e = 1; e < 5; ++e) EXPECT_LT(r.epoch_loss[e], r.epoch_loss[e - 1]) << "epoch " << e;
  for (double l : r.epoch_loss) EXPECT_TRUE(std::isfinite(l));
  EXPECT_GE(dataset_accuracy(m, data), 0.95);
}

}  // namespace
}  // namespace capsnoise
