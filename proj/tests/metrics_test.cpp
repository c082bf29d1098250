#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "capsnoise/metrics.hpp"

namespace capsnoise {
namespace {

using Labels = std::vector<std::size_t>;

TEST(Accuracy, Examples) {
  EXPECT_EQ(accuracy(Labels{1, 2, 3}, Labels{1, 2, 3}), 1.0);
  EXPECT_EQ(accuracy(Labels{1, 1, 0}, Labels{1, 0, 0}), 2.0 / 3.0);
  EXPECT_THROW(accuracy(Labels{1}, Labels{1, 2}), UsageError);
}

TEST(F1Macro, Examples) {
  EXPECT_EQ(f1_macro(Labels{0, 1, 2, 3, 4}, Labels{0, 1, 2, 3, 4}), 1.0);
  EXPECT_NEAR(f1_macro(Labels{0, 0, 1, 2}, Labels{0, 1, 1, 2}, 3), 7.0 / 9.0, 1e-15);
  // Classes 3 and 4 absent and never predicted: each contributes 0.
  EXPECT_NEAR(f1_macro(Labels{0, 1, 2}, Labels{0, 1, 2}, 5), 3.0 / 5.0, 1e-15);
  EXPECT_THROW(f1_macro(Labels{0}, Labels{0, 1}), UsageError);
  EXPECT_THROW(f1_macro(Labels{7}, Labels{0}), UsageError);
}

// Independent counting oracle: explicit confusion matrix.
double oracle_f1(const Labels& p, const Labels& y, std::size_t k) {
  std::vector<std::vector<double>> cm(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < p.size(); ++i) cm[y[i]][p[i]] += 1;
  double total = 0;
  for (std::size_t c = 0; c < k; ++c) {
    double col = 0, row = 0;
    for (std::size_t j = 0; j < k; ++j) {
      col += cm[j][c];
      row += cm[c][j];
    }
    const double prec = col > 0 ? cm[c][c] / col : 0, rec = row > 0 ? cm[c][c] / row : 0;
    total += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0;
  }
  return total / static_cast<double>(k);
}

TEST(Metrics, MatchCountingOracleOnRandomVectors) {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<std::size_t> cls(0, 4), len(1, 60);
  for (int trial = 0; trial < 200; ++trial) {
    Labels p(len(rng)), y;
    for (auto& v : p) v = cls(rng);
    for (std::size_t i = 0; i < p.size(); ++i) y.push_back(cls(rng));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < p.size(); ++i) hits += p[i] == y[i];
    EXPECT_EQ(accuracy(p, y), static_cast<double>(hits) / static_cast<double>(p.size()));
    EXPECT_NEAR(f1_macro(p, y), oracle_f1(p, y, 5), 1e-15);
    const double a = accuracy(p, y), f = f1_macro(p, y);
    EXPECT_TRUE(a >= 0 && a <= 1 && f >= 0 && f <= 1);
  }
}

TEST(Metrics, DiagonalConfusionGivesEqualAccuracyAndF1) {
  const Labels y{0, 1, 2, 3, 4, 0, 1, 2, 3, 4, 4};
  EXPECT_EQ(accuracy(y, y), f1_macro(y, y));
}

}  // namespace
}  // namespace capsnoise
