#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "capsnoise/capsnet.hpp"
#include "capsnoise/gradcheck.hpp"
#include "scalar_oracle.hpp"
#include "test_util.hpp"

using namespace capsnoise;
using capsnoise::test_support::random_tensor;
using capsnoise::test_support::randomize;
using capsnoise::test_support::tiny_capsnet_config;

namespace {

CapsNetModel random_tiny_model(std::uint64_t seed) {
  CapsNetModel m = make_capsnet(tiny_capsnet_config(seed));
  std::mt19937_64 rng(seed * 7 + 1);
  randomize(m.params.W, rng);
  randomize(m.params.conv1.bias, rng, -0.2, 0.2);
  randomize(m.params.primary.bias, rng, -0.2, 0.2);
  randomize(m.params.dec1.bias, rng, -0.2, 0.2);
  randomize(m.params.dec2.bias, rng, -0.2, 0.2);
  return m;
}

std::vector<std::vector<oracle::Vec>> to_nested(const Tensor& votes) {
  std::vector<std::vector<oracle::Vec>> out(votes.dim(0), std::vector<oracle::Vec>(votes.dim(1)));
  for (std::size_t i = 0; i < votes.dim(0); ++i)
    for (std::size_t j = 0; j < votes.dim(1); ++j)
      for (std::size_t a = 0; a < votes.dim(2); ++a) out[i][j].push_back(votes(i, j, a));
  return out;
}

}  // namespace

TEST(Squash, Examples) {
  EXPECT_EQ(squash(Tensor::vector({0, 0, 0})), Tensor::vector({0, 0, 0}));
  const Tensor unit = Tensor::vector({0.6, 0.8});
  const Tensor half = squash(unit);
  EXPECT_NEAR(half[0], 0.3, 1e-15);
  EXPECT_NEAR(half[1], 0.4, 1e-15);
  const Tensor v = squash(Tensor::vector({3, 0}));
  EXPECT_NEAR(v[0], 0.9, 1e-15);
  EXPECT_EQ(v[1], 0.0);
}

TEST(Squash, BoundedAndParallel) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor s = random_tensor({6}, rng, -50, 50);
    const Tensor v = squash(s);
    const double nv = std::sqrt(squared_norm(v)), ns = std::sqrt(squared_norm(s));
    EXPECT_LT(nv, 1.0);
    EXPECT_NEAR(dot(v.data(), s.data()), nv * ns, 1e-9 * nv * ns);
  }
}

TEST(Squash, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor s = random_tensor({4}, rng, -2, 2);
    const Tensor probe = random_tensor({4}, rng);
    const Tensor num = finite_difference_grad([&](const Tensor& t) { return dot(squash(t).data(), probe.data()); }, s);
    EXPECT_LE(relative_error(squash_backward(s, probe), num), 1e-6);
  }
  EXPECT_EQ(squash_backward(Tensor({3}), Tensor::vector({1, 2, 3})), Tensor({3}));
}

TEST(Votes, IdentityAndZero) {
  Tensor W({2, 2, 2, 2});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t a = 0; a < 2; ++a) W(i, j, a, a) = 1.0;
  Tensor u({2, 2}, std::vector<double>{1, 2, 3, 4});
  const Tensor votes = compute_votes(u, W);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t a = 0; a < 2; ++a) EXPECT_EQ(votes(i, j, a), u(i, a));
  EXPECT_EQ(max_abs(compute_votes(Tensor({2, 2}), W)), 0.0);
  EXPECT_THROW(compute_votes(Tensor({3, 2}), W), ShapeError);
}

TEST(Votes, MatchesNaiveLoop) {
  std::mt19937_64 rng(21);
  const Tensor W = random_tensor({2, 2, 2, 2}, rng);
  const Tensor u = random_tensor({2, 2}, rng);
  std::vector<oracle::Vec> u_rows = {{u(0, 0), u(0, 1)}, {u(1, 0), u(1, 1)}};
  const auto want = oracle::votes(u_rows, W);
  const Tensor got = compute_votes(u, W);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t a = 0; a < 2; ++a) EXPECT_NEAR(got(i, j, a), want[i][j][a], 1e-15);
}

TEST(Routing, SingleOutputCapsule) {
  std::mt19937_64 rng(2);
  const Tensor votes = random_tensor({4, 1, 3}, rng);
  const RoutingResult r = dynamic_routing(votes, 3);
  for (const auto& it : r.history)
    for (double c : it.c.data()) EXPECT_EQ(c, 1.0);
  Tensor s({3});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t a = 0; a < 3; ++a) s[a] += votes(i, 0, a);
  const Tensor v = squash(s);
  for (std::size_t a = 0; a < 3; ++a) EXPECT_NEAR(r.v(0, a), v[a], 1e-15);
}

TEST(Routing, ZeroVotes) {
  const RoutingResult r = dynamic_routing(Tensor({3, 4, 2}), 3);
  for (const auto& it : r.history)
    for (double c : it.c.data()) EXPECT_EQ(c, 0.25);
  EXPECT_EQ(max_abs(r.v), 0.0);
  EXPECT_THROW(dynamic_routing(Tensor({3, 4, 2}), 0), ShapeError);
}

TEST(Routing, MatchesScalarLoopOracle) {
  std::mt19937_64 rng(33);
  const Tensor votes = random_tensor({3, 2, 4}, rng, -2, 2);
  const RoutingResult r = dynamic_routing(votes, 3);
  const auto trace = oracle::route(to_nested(votes), 3);
  ASSERT_EQ(r.history.size(), 3u);
  for (std::size_t it = 0; it < 3; ++it)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(r.history[it].c(i, j), trace.c_per_iter[it][i][j], 1e-14);
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t a = 0; a < 4; ++a) EXPECT_NEAR(r.v(j, a), trace.v[j][a], 1e-14);
}

TEST(Routing, CouplingStaysOnSimplex) {
  std::mt19937_64 rng(44);
  for (int trial = 0; trial < 30; ++trial) {
    const Tensor votes = random_tensor({6, 5, 4}, rng, -3, 3);
    const RoutingResult r = dynamic_routing(votes, 4);
    for (const auto& it : r.history)
      for (std::size_t i = 0; i < 6; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < 5; ++j) {
          EXPECT_GT(it.c(i, j), 0.0);
          total += it.c(i, j);
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
      }
    const Tensor norms = row_norms(r.v);
    for (double n : norms.data()) EXPECT_LT(n, 1.0);
  }
}

TEST(Routing, DeterministicBitwise) {
  std::mt19937_64 rng(45);
  const Tensor votes = random_tensor({8, 5, 4}, rng);
  const RoutingResult a = dynamic_routing(votes, 3);
  const RoutingResult b = dynamic_routing(votes, 3);
  EXPECT_EQ(a.v, b.v);
  EXPECT_EQ(a.state.b, b.state.b);
  EXPECT_EQ(a.state.c, b.state.c);
}

// Capsule 0 receives identical votes from every input; for the other classes
// votes come in cancelling pairs, so agreement only ever favours capsule 0.
TEST(Routing, AgreementIncreasesCoupling) {
  std::mt19937_64 rng(46);
  const std::size_t np = 6, nc = 4, dc = 3;
  Tensor votes({np, nc, dc});
  const Tensor shared = random_tensor({dc}, rng);
  for (std::size_t i = 0; i < np; i += 2)
    for (std::size_t j = 1; j < nc; ++j) {
      const Tensor w = random_tensor({dc}, rng);
      for (std::size_t a = 0; a < dc; ++a) {
        votes(i, j, a) = w[a];
        votes(i + 1, j, a) = -w[a];
      }
    }
  for (std::size_t i = 0; i < np; ++i)
    for (std::size_t a = 0; a < dc; ++a) votes(i, 0, a) = shared[a];
  const RoutingResult r = dynamic_routing(votes, 3);
  for (std::size_t it = 1; it < r.history.size(); ++it)
    for (std::size_t i = 0; i < np; ++i) EXPECT_GE(r.history[it].c(i, 0), r.history[it - 1].c(i, 0));
  EXPECT_GT(r.history.back().c(0, 0), r.history.front().c(0, 0));
}

TEST(Routing, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(47);
  for (int trial = 0; trial < 15; ++trial) {
    const Tensor votes = random_tensor({4, 3, 3}, rng, -1.5, 1.5);
    const Tensor probe = random_tensor({3, 3}, rng);
    const std::size_t iters = 1 + trial % 4;
    const RoutingResult r = dynamic_routing(votes, iters);
    const Tensor analytic = dynamic_routing_backward(votes, r, probe);
    const Tensor numeric = finite_difference_grad(
        [&](const Tensor& t) { return dot(dynamic_routing(t, iters).v.data(), probe.data()); }, votes);
    EXPECT_LE(relative_error(analytic, numeric), 1e-6) << "iters=" << iters;
  }
}

TEST(MarginLoss, Examples) {
  const MarginParams mp{0.9, 0.1, 0.5};
  EXPECT_NEAR(margin_loss(Tensor::vector({0.1, 0.9, 0.1}), 1, mp), 0.0, 1e-15);
  EXPECT_NEAR(margin_loss(Tensor({5}), 3, mp), 0.81, 1e-15);
  EXPECT_NEAR(margin_loss(Tensor::vector({0.8, 0.3}), 0, mp), 0.03, 1e-15);
  EXPECT_THROW(margin_loss(Tensor({5}), 5, mp), DataError);
}

TEST(Reconstruct, ZeroWeightsGiveBiasSignal) {
  CapsNetConfig cfg = tiny_capsnet_config(1);
  CapsNetModel m{cfg, capsnet_zero_params(cfg)};
  m.params.dec3.bias.fill(0.3);
  const Tensor recon = reconstruct(m, Tensor({5, 4}), 2);
  for (double v : recon.data()) EXPECT_NEAR(v, 1.0 / (1.0 + std::exp(-0.3)), 1e-15);
}

TEST(Reconstruct, MasksToSelectedCapsule) {
  // Single linear-ish path: L == d_c, dec1/dec2 identity on positive inputs and
  // a large-gain dec3 whose sigmoid output is compared against the same chain.
  CapsNetConfig cfg = tiny_capsnet_config(1);
  cfg.trunk.signal_length = 4;
  cfg.trunk.conv_kernel = 1;
  cfg.trunk.primary_kernel = 1;
  cfg.trunk.primary_stride = 1;
  cfg.decoder_hidden1 = 4;
  cfg.decoder_hidden2 = 4;
  CapsNetModel m{cfg, capsnet_zero_params(cfg)};
  for (std::size_t i = 0; i < 4; ++i) {
    m.params.dec1.weights(i, i) = 1.0;
    m.params.dec2.weights(i, i) = 1.0;
    m.params.dec3.weights(i, i) = 1.0;
  }
  Tensor v({5, 4});
  for (std::size_t a = 0; a < 4; ++a) {
    v(1, a) = 0.1 * static_cast<double>(a + 1);
    v(3, a) = 0.05;
  }
  const Tensor by_label = reconstruct(m, v, 3);
  const Tensor by_argmax = reconstruct(m, v);
  for (std::size_t a = 0; a < 4; ++a) {
    EXPECT_NEAR(by_label[a], 1.0 / (1.0 + std::exp(-0.05)), 1e-15);
    EXPECT_NEAR(by_argmax[a], 1.0 / (1.0 + std::exp(-v(1, a))), 1e-15);
  }
}

TEST(Reconstruct, MatchesDenseChain) {
  CapsNetModel m = random_tiny_model(3);
  std::mt19937_64 rng(5);
  const Tensor v = random_tensor({5, 4}, rng, -0.5, 0.5);
  Tensor cap({4});
  for (std::size_t a = 0; a < 4; ++a) cap[a] = v(2, a);
  const Tensor want = sigmoid(dense_forward(m.params.dec3, relu(dense_forward(m.params.dec2, relu(dense_forward(m.params.dec1, cap))))));
  EXPECT_EQ(reconstruct(m, v, 2), want);
}

TEST(CapsNetForward, ZeroInputZeroBias) {
  CapsNetModel m = make_capsnet(tiny_capsnet_config(9));
  const CapsNetOutput out = capsnet_forward(m, Tensor({16}), 0);
  EXPECT_EQ(max_abs(out.norms), 0.0);
  EXPECT_NEAR(margin_loss(out.norms, 0, m.config.margin), 0.81, 1e-15);
}

TEST(CapsNetForward, NormsBoundedAndShapeChecked) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    CapsNetModel m = random_tiny_model(100 + trial);
    const CapsNetOutput out = capsnet_forward(m, random_tensor({16}, rng, 0, 1));
    for (double n : out.norms.data()) {
      EXPECT_GE(n, 0.0);
      EXPECT_LT(n, 1.0);
    }
    EXPECT_EQ(out.recon.size(), 16u);
  }
  CapsNetModel m = random_tiny_model(1);
  EXPECT_THROW(capsnet_forward(m, Tensor({15})), ShapeError);
}

TEST(CapsNetForward, MatchesEndToEndScalarOracle) {
  CapsNetConfig cfg = tiny_capsnet_config(77);
  cfg.trunk = {32, 4, 5, 8, 5, 2};
  cfg.primary_dim = 4;
  CapsNetModel m = make_capsnet(cfg);
  std::mt19937_64 rng(78);
  randomize(m.params.W, rng);
  const Tensor x = random_tensor({32}, rng, 0, 1);
  const Tensor norms = capsnet_forward(m, x).norms;
  const oracle::Vec want = oracle::capsnet_norms(m, x.values());
  ASSERT_EQ(want.size(), norms.size());
  for (std::size_t j = 0; j < want.size(); ++j) EXPECT_NEAR(norms[j], want[j], 1e-13);
}

TEST(CapsNetBackward, ZeroLossHasZeroGradients) {
  CapsNetConfig cfg = tiny_capsnet_config(5);
  cfg.margin = {0.0, 1.0, 0.5};  // both hinges inactive for any norm in [0, 1)
  cfg.recon_weight = 0.0;
  CapsNetModel m = make_capsnet(cfg);
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({16}, rng, 0, 1);
  const CapsNetOutput out = capsnet_forward(m, x, 2);
  EXPECT_EQ(capsnet_loss(m, out, 2), 0.0);
  const CapsNetGrads g = capsnet_backward(m, out.cache, 2);
  for_each_tensor(g.params, [](const std::string&, const Tensor& t) { EXPECT_EQ(max_abs(t), 0.0); });
  EXPECT_EQ(max_abs(g.input), 0.0);
}

TEST(CapsNetBackward, RejectsMismatchedCache) {
  CapsNetModel m = make_capsnet(tiny_capsnet_config(5));
  const CapsNetOutput out = capsnet_forward(m, Tensor({16}, 0.5), 1);
  EXPECT_THROW(capsnet_backward(m, out.cache, 2), UsageError);
  EXPECT_THROW(capsnet_backward(m, capsnet_forward(m, Tensor({16}, 0.5)).cache, 1), UsageError);
}

TEST(CapsNetBackward, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    CapsNetModel m = random_tiny_model(seed);
    if (seed % 3 == 0) m.config.recon_weight = 0.0005;
    std::mt19937_64 rng(seed + 1000);
    const Tensor x = random_tensor({16}, rng, 0, 1);
    const std::size_t label = seed % 5;
    const CapsNetGrads g = capsnet_backward(m, capsnet_forward(m, x, label).cache, label);

    CapsNetParams& params = m.params;
    CapsNetParams grads = g.params;
    std::vector<std::pair<std::string, Tensor*>> analytic;
    for_each_tensor(grads, [&](const std::string& name, Tensor& t) { analytic.emplace_back(name, &t); });
    std::size_t k = 0;
    for_each_tensor(params, [&](const std::string& name, Tensor& t) {
      const Tensor saved = t;
      const Tensor numeric = finite_difference_grad(
          [&](const Tensor& probe) {
            t = probe;
            return capsnet_loss(m, x, label);
          },
          saved);
      t = saved;
      EXPECT_LE(relative_error(*analytic[k].second, numeric), 1e-4) << name << " seed " << seed;
      ++k;
    });
    const Tensor num_x = finite_difference_grad([&](const Tensor& t) { return capsnet_loss(m, t, label); }, x);
    EXPECT_LE(relative_error(g.input, num_x), 1e-4) << "input seed " << seed;
  }
}

TEST(CapsNetInit, SeededAndFreshCheck) {
  const CapsNetModel a = make_capsnet(tiny_capsnet_config(3));
  const CapsNetModel b = make_capsnet(tiny_capsnet_config(3));
  EXPECT_EQ(a, b);
  EXPECT_TRUE(is_fresh_init(a));
  CapsNetModel c = a;
  c.params.W[0] += 1e-3;
  EXPECT_FALSE(is_fresh_init(c));
  EXPECT_FALSE(make_capsnet(tiny_capsnet_config(4)) == a);
}
