#pragma once

#include <concepts>
#include <cstdint>
#include <random>
#include <type_traits>

#include "capsnoise/capsnet.hpp"
#include "capsnoise/layers.hpp"

namespace capsnoise {

/// Baseline CNN: the capsule network's conv trunk (relu after both convs),
/// global average pooling over time, then a dense softmax head.
struct CnnConfig {
  TrunkConfig trunk;
  std::size_t num_classes = 5;
  std::uint64_t seed = 0;

  friend bool operator==(const CnnConfig&, const CnnConfig&) = default;
};

struct CnnParams {
  Conv1dLayer conv1;
  Conv1dLayer conv2;
  DenseLayer head;

  friend bool operator==(const CnnParams&, const CnnParams&) = default;
};

template <class Params, class F>
  requires std::same_as<std::remove_const_t<Params>, CnnParams>
void for_each_tensor(Params& p, F&& f) {
  f("conv1.kernels", p.conv1.kernels);
  f("conv1.bias", p.conv1.bias);
  f("conv2.kernels", p.conv2.kernels);
  f("conv2.bias", p.conv2.bias);
  f("head.weights", p.head.weights);
  f("head.bias", p.head.bias);
}

struct CnnModel {
  CnnConfig config;
  CnnParams params;

  friend bool operator==(const CnnModel&, const CnnModel&) = default;
};

inline CnnParams cnn_zero_params(const CnnConfig& config) {
  const auto& t = config.trunk;
  if (config.num_classes == 0) throw ShapeError("cnn: num_classes must be positive");
  (void)t.primary_length();
  CnnParams p;
  p.conv1 = make_conv1d(1, t.conv_channels, t.conv_kernel, 1);
  p.conv2 = make_conv1d(t.conv_channels, t.primary_channels, t.primary_kernel, t.primary_stride);
  p.head = make_dense(t.primary_channels, config.num_classes);
  return p;
}

inline CnnModel make_cnn(const CnnConfig& config) {
  CnnModel m{config, cnn_zero_params(config)};
  std::mt19937_64 rng(config.seed);
  init_conv1d(m.params.conv1, rng);
  init_conv1d(m.params.conv2, rng);
  init_dense(m.params.head, rng);
  return m;
}

inline bool is_fresh_init(const CnnModel& m) { return make_cnn(m.config).params == m.params; }

inline std::size_t trunk_parameter_count(const Conv1dLayer& a, const Conv1dLayer& b) {
  return a.kernels.size() + a.bias.size() + b.kernels.size() + b.bias.size();
}

/// Throws unless the CNN trunk has the same hyperparameters and parameter
/// shapes as the capsule network trunk.
inline void check_trunk_parity(const CapsNetModel& caps, const CnnModel& cnn) {
  const auto& a = caps.params;
  const auto& b = cnn.params;
  const bool same_shapes = a.conv1.kernels.shape() == b.conv1.kernels.shape() && a.conv1.stride == b.conv1.stride &&
                           a.primary.kernels.shape() == b.conv2.kernels.shape() &&
                           a.primary.stride == b.conv2.stride;
  if (!(caps.config.trunk == cnn.config.trunk) || !same_shapes ||
      trunk_parameter_count(a.conv1, a.primary) != trunk_parameter_count(b.conv1, b.conv2) ||
      caps.config.num_classes != cnn.config.num_classes) {
    throw ShapeError("cnn trunk does not match the paired capsule network trunk");
  }
}

/// CNN paired with a capsule network: same trunk, same class count.
inline CnnModel make_matched_cnn(const CapsNetModel& caps, std::uint64_t seed) {
  CnnModel cnn = make_cnn({caps.config.trunk, caps.config.num_classes, seed});
  check_trunk_parity(caps, cnn);
  return cnn;
}

struct CnnCache {
  Tensor x;
  Tensor pre1, h1, pre2, h2;
  Tensor pooled;
};

struct CnnOutput {
  Tensor logits;
  CnnCache cache;
};

inline CnnOutput cnn_forward(const CnnModel& m, const Tensor& x) {
  CnnCache c;
  c.x = as_signal_row(x, m.config.trunk.signal_length);
  c.pre1 = conv1d_forward(m.params.conv1, c.x);
  c.h1 = relu(c.pre1);
  c.pre2 = conv1d_forward(m.params.conv2, c.h1);
  c.h2 = relu(c.pre2);
  const std::size_t ch = c.h2.dim(0), len = c.h2.dim(1);
  c.pooled = Tensor({ch});
  for (std::size_t k = 0; k < ch; ++k) {
    double acc = 0.0;
    for (std::size_t t = 0; t < len; ++t) acc += c.h2(k, t);
    c.pooled[k] = acc / static_cast<double>(len);
  }
  CnnOutput out{dense_forward(m.params.head, c.pooled), {}};
  out.cache = std::move(c);
  return out;
}

/// -log softmax(logits)[label], via log-sum-exp.
inline double cross_entropy_loss(const Tensor& logits, std::size_t label) {
  if (label >= logits.size()) throw DataError("cross_entropy_loss: label " + std::to_string(label) + " out of range");
  double mx = logits[0];
  for (double v : logits.data()) mx = std::max(mx, v);
  double total = 0.0;
  for (double v : logits.data()) total += std::exp(v - mx);
  return std::log(total) + mx - logits[label];
}

inline Tensor cross_entropy_backward(const Tensor& logits, std::size_t label) {
  Tensor g = softmax(logits);
  g[label] -= 1.0;
  return g;
}

inline double cnn_loss(const CnnModel& m, const Tensor& x, std::size_t label) {
  return cross_entropy_loss(cnn_forward(m, x).logits, label);
}

inline std::size_t cnn_predict(const CnnModel& m, const Tensor& x) { return argmax(cnn_forward(m, x).logits); }

struct CnnGrads {
  CnnParams params;
  Tensor input;  // [L]
};

inline CnnGrads cnn_backward(const CnnModel& m, const CnnOutput& out, std::size_t label) {
  const CnnCache& c = out.cache;
  CnnGrads g{cnn_zero_params(m.config), {}};
  const DenseGrads gh = dense_backward(m.params.head, c.pooled, cross_entropy_backward(out.logits, label));
  g.params.head = {gh.weights, gh.bias};
  const std::size_t ch = c.h2.dim(0), len = c.h2.dim(1);
  Tensor g_h2({ch, len});
  for (std::size_t k = 0; k < ch; ++k)
    for (std::size_t t = 0; t < len; ++t) g_h2(k, t) = gh.input[k] / static_cast<double>(len);
  const Conv1dGrads g2 = conv1d_backward(m.params.conv2, c.h1, relu_backward(c.pre2, g_h2));
  g.params.conv2.kernels = g2.kernels;
  g.params.conv2.bias = g2.bias;
  const Conv1dGrads g1 = conv1d_backward(m.params.conv1, c.x, relu_backward(c.pre1, g2.input));
  g.params.conv1.kernels = g1.kernels;
  g.params.conv1.bias = g1.bias;
  g.input = g1.input.reshaped({m.config.trunk.signal_length});
  return g;
}

}  // namespace capsnoise
