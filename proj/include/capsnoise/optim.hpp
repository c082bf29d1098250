#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "capsnoise/tensor.hpp"

namespace capsnoise {

enum class OptimizerKind { sgd_momentum, adam };

inline std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd-momentum"; }

inline OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd-momentum" || name == "sgd") return OptimizerKind::sgd_momentum;
  throw UsageError("unknown optimizer '" + std::string(name) + "'");
}

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double momentum = 0.9;  // sgd-momentum
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First-order optimizer over a fixed, ordered list of parameter tensors.
class Optimizer {
public:
  explicit Optimizer(OptimizerSettings settings) : s_(settings) {}

  void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads) {
    if (params.size() != grads.size()) throw ShapeError("optimizer: parameter/gradient count mismatch");
    if (m_.empty()) {
      for (const Tensor* p : params) {
        m_.push_back(zeros_like(*p));
        v_.push_back(zeros_like(*p));
      }
    }
    ++t_;
    const double lr = s_.learning_rate;
    const double bc1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor& p = *params[k];
      const Tensor& g = *grads[k];
      p.require_same_shape(g, "optimizer step");
      Tensor& m = m_[k];
      Tensor& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (s_.kind == OptimizerKind::adam) {
          m[i] = s_.beta1 * m[i] + (1.0 - s_.beta1) * g[i];
          v[i] = s_.beta2 * v[i] + (1.0 - s_.beta2) * g[i] * g[i];
          p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + s_.epsilon);
        } else {
          m[i] = s_.momentum * m[i] + g[i];
          p[i] -= lr * m[i];
        }
      }
    }
  }

private:
  OptimizerSettings s_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  long long t_ = 0;
};

}  // namespace capsnoise
