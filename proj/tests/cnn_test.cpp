#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "capsnoise/cnn.hpp"
#include "capsnoise/gradcheck.hpp"
#include "scalar_oracle.hpp"
#include "test_util.hpp"

namespace capsnoise {
namespace {

using test_support::random_tensor;
using test_support::randomize;
using test_support::tiny_capsnet_config;

CnnModel tiny_cnn(std::uint64_t seed) {
  CnnModel m = make_matched_cnn(make_capsnet(tiny_capsnet_config(seed)), seed + 100);
  std::mt19937_64 rng(seed * 11 + 3);
  randomize(m.params.conv1.bias, rng, -0.2, 0.2);
  randomize(m.params.conv2.bias, rng, -0.2, 0.2);
  randomize(m.params.head.bias, rng, -0.2, 0.2);
  return m;
}

TEST(CnnForward, ZeroWeightsGiveHeadBias) {
  CnnModel m = tiny_cnn(1);
  for_each_tensor(m.params, [](const std::string&, Tensor& t) { t.fill(0.0); });
  m.params.head.bias = Tensor::vector({0.1, -0.2, 0.3, 0.4, -0.5});
  std::mt19937_64 rng(2);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(cnn_forward(m, random_tensor({16}, rng, 0, 1)).logits, m.params.head.bias);
}

TEST(CnnForward, SoftmaxSumsToOne) {
  const CnnModel m = tiny_cnn(2);
  std::mt19937_64 rng(3);
  const Tensor p = softmax(cnn_forward(m, random_tensor({16}, rng, 0, 1)).logits);
  EXPECT_NEAR(sum(p), 1.0, 1e-12);
}

TEST(CnnForward, MatchesLayerOracle) {
  const CnnModel m = tiny_cnn(3);
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({16}, rng, 0, 1);
  auto relu_rows = [](std::vector<oracle::Vec> rows) {
    for (auto& r : rows)
      for (double& v : r) v = v > 0 ? v : 0;
    return rows;
  };
  const auto h1 = relu_rows(oracle::conv(m.params.conv1, {oracle::Vec(x.data().begin(), x.data().end())}));
  const auto h2 = relu_rows(oracle::conv(m.params.conv2, h1));
  oracle::Vec pooled;
  for (const auto& row : h2) {
    double acc = 0;
    for (double v : row) acc += v;
    pooled.push_back(acc / static_cast<double>(row.size()));
  }
  const Tensor logits = cnn_forward(m, x).logits;
  for (std::size_t j = 0; j < 5; ++j) {
    double z = m.params.head.bias[j];
    for (std::size_t k = 0; k < pooled.size(); ++k) z += m.params.head.weights(j, k) * pooled[k];
    EXPECT_NEAR(logits[j], z, 1e-12);
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogFive) {
  EXPECT_NEAR(cross_entropy_loss(Tensor({5}, 0.3), 2), std::log(5.0), 1e-15);
}

TEST(CrossEntropy, DominantLogitGoesToZero) {
  double prev = 1e9;
  for (double margin : {1.0, 5.0, 20.0, 100.0}) {
    const double loss = cross_entropy_loss(Tensor::vector({0, 0, margin, 0, 0}), 2);
    EXPECT_LT(loss, prev);
    prev = loss;
  }
  EXPECT_LT(prev, 1e-40);
  EXPECT_THROW(cross_entropy_loss(Tensor({5}), 5), DataError);
}

TEST(CnnBackward, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    CnnModel m = tiny_cnn(seed);
    std::mt19937_64 rng(seed + 50);
    const Tensor x = random_tensor({16}, rng, 0, 1);
    const std::size_t label = seed % 5;
    const CnnGrads g = cnn_backward(m, cnn_forward(m, x), label);
    std::vector<const Tensor*> analytic;
    for_each_tensor(g.params, [&](const std::string&, const Tensor& t) { analytic.push_back(&t); });
    std::size_t k = 0;
    for_each_tensor(m.params, [&](const std::string& name, Tensor& t) {
      const Tensor saved = t;
      const Tensor numeric = finite_difference_grad(
          [&](const Tensor& probe) {
            t = probe;
            return cnn_loss(m, x, label);
          },
          saved);
      t = saved;
      EXPECT_LE(relative_error(*analytic[k++], numeric), 1e-4) << name << " seed " << seed;
    });
    const Tensor num_x = finite_difference_grad([&](const Tensor& t) { return cnn_loss(m, t, label); }, x);
    EXPECT_LE(relative_error(g.input, num_x), 1e-4) << "input seed " << seed;
  }
}

TEST(CnnParity, MatchedTrunkAndMismatchRejected) {
  const CapsNetModel caps = make_capsnet(tiny_capsnet_config(5));
  const CnnModel cnn = make_matched_cnn(caps, 9);
  EXPECT_EQ(cnn.config.trunk, caps.config.trunk);
  EXPECT_NO_THROW(check_trunk_parity(caps, cnn));
  EXPECT_EQ(trunk_parameter_count(cnn.params.conv1, cnn.params.conv2),
            trunk_parameter_count(caps.params.conv1, caps.params.primary));
  CnnConfig other = cnn.config;
  other.trunk.conv_channels += 1;
  EXPECT_ANY_THROW(check_trunk_parity(caps, make_cnn(other)));
}

TEST(CnnInit, FreshInitDetected) {
  CnnModel m = tiny_cnn(6);
  const CnnModel fresh = make_cnn(m.config);
  EXPECT_TRUE(is_fresh_init(fresh));
  EXPECT_FALSE(is_fresh_init(m));
  EXPECT_THROW(cnn_forward(fresh, Tensor({15})), ShapeError);
}

}  // namespace
}  // namespace capsnoise
