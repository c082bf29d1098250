#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "capsnoise/error.hpp"

namespace capsnoise {

/// Fraction of exact matches.
inline double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels) {
  if (preds.size() != labels.size()) throw UsageError("accuracy: length mismatch");
  if (preds.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

/// Unweighted mean over classes of 2PR / (P + R); a class with P + R = 0
/// (absent and never predicted, or never right) contributes 0.
inline double f1_macro(std::span<const std::size_t> preds, std::span<const std::size_t> labels,
                       std::size_t n_classes = 5) {
  if (preds.size() != labels.size()) throw UsageError("f1_macro: length mismatch");
  if (n_classes == 0) throw UsageError("f1_macro: n_classes must be positive");
  std::vector<std::size_t> tp(n_classes), fp(n_classes), fn(n_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= n_classes || labels[i] >= n_classes) throw UsageError("f1_macro: class index out of range");
    if (preds[i] == labels[i]) {
      ++tp[preds[i]];
    } else {
      ++fp[preds[i]];
      ++fn[labels[i]];
    }
  }
  double total = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const double p = tp[c] + fp[c] ? static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fp[c]) : 0.0;
    const double r = tp[c] + fn[c] ? static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fn[c]) : 0.0;
    total += (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  return total / static_cast<double>(n_classes);
}

}  // namespace capsnoise
