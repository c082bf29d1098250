#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>

#include "capsnoise/tensor.hpp"

namespace capsnoise {

/// Valid-padding 1-D convolution. kernels: [C_out x C_in x K], bias: [C_out].
struct Conv1dLayer {
  Tensor kernels;
  Tensor bias;
  std::size_t stride = 1;

  [[nodiscard]] std::size_t out_channels() const { return kernels.dim(0); }
  [[nodiscard]] std::size_t in_channels() const { return kernels.dim(1); }
  [[nodiscard]] std::size_t kernel_size() const { return kernels.dim(2); }

  [[nodiscard]] std::size_t output_length(std::size_t input_length) const {
    if (input_length < kernel_size()) {
      throw ShapeError("conv1d: input length " + std::to_string(input_length) + " shorter than kernel " +
                       std::to_string(kernel_size()));
    }
    return (input_length - kernel_size()) / stride + 1;
  }

  friend bool operator==(const Conv1dLayer&, const Conv1dLayer&) = default;
};

/// Fully connected layer. weights: [N_out x N_in], bias: [N_out].
struct DenseLayer {
  Tensor weights;
  Tensor bias;

  [[nodiscard]] std::size_t out_features() const { return weights.dim(0); }
  [[nodiscard]] std::size_t in_features() const { return weights.dim(1); }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct Conv1dGrads {
  Tensor input;
  Tensor kernels;
  Tensor bias;
};

struct DenseGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

inline Conv1dLayer make_conv1d(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride) {
  if (stride == 0) throw ShapeError("conv1d: stride must be positive");
  return {Tensor({c_out, c_in, k}), Tensor({c_out}), stride};
}

inline DenseLayer make_dense(std::size_t n_in, std::size_t n_out) {
  return {Tensor({n_out, n_in}), Tensor({n_out})};
}

/// Uniform fan-in scaled init: U(-sqrt(6/fan_in), sqrt(6/fan_in)) times `gain`.
inline void init_uniform_fan_in(Tensor& t, std::size_t fan_in, std::mt19937_64& rng, double gain = 1.0) {
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data()) v = dist(rng);
}

inline void init_conv1d(Conv1dLayer& layer, std::mt19937_64& rng) {
  init_uniform_fan_in(layer.kernels, layer.in_channels() * layer.kernel_size(), rng);
  layer.bias.fill(0.0);
}

inline void init_dense(DenseLayer& layer, std::mt19937_64& rng, double gain = 1.0) {
  init_uniform_fan_in(layer.weights, layer.in_features(), rng, gain);
  layer.bias.fill(0.0);
}

namespace detail {

inline void check_conv_input(const Conv1dLayer& layer, const Tensor& input) {
  if (input.rank() != 2 || input.dim(0) != layer.in_channels()) {
    throw ShapeError("conv1d: expected input [" + std::to_string(layer.in_channels()) + " x L], got " +
                     shape_str(input.shape()));
  }
  (void)layer.output_length(input.dim(1));
}

inline void check_dense_input(const DenseLayer& layer, const Tensor& input) {
  if (input.size() != layer.in_features()) {
    throw ShapeError("dense: expected " + std::to_string(layer.in_features()) + " inputs, got " +
                     shape_str(input.shape()));
  }
}

}  // namespace detail

/// out[c,t] = bias[c] + sum_{i,k} kernels[c,i,k] * input[i, t*stride + k]
inline Tensor conv1d_forward(const Conv1dLayer& layer, const Tensor& input) {
  detail::check_conv_input(layer, input);
  const std::size_t c_out = layer.out_channels(), c_in = layer.in_channels(), k_len = layer.kernel_size();
  const std::size_t len = input.dim(1), out_len = layer.output_length(len);
  Tensor out({c_out, out_len});
  for (std::size_t c = 0; c < c_out; ++c) {
    for (std::size_t t = 0; t < out_len; ++t) {
      double acc = layer.bias[c];
      const std::size_t base = t * layer.stride;
      for (std::size_t i = 0; i < c_in; ++i) {
        const double* w = &layer.kernels.data()[(c * c_in + i) * k_len];
        const double* x = &input.data()[i * len + base];
        for (std::size_t k = 0; k < k_len; ++k) acc += w[k] * x[k];
      }
      out(c, t) = acc;
    }
  }
  return out;
}

inline Conv1dGrads conv1d_backward(const Conv1dLayer& layer, const Tensor& input, const Tensor& grad_out) {
  detail::check_conv_input(layer, input);
  const std::size_t c_out = layer.out_channels(), c_in = layer.in_channels(), k_len = layer.kernel_size();
  const std::size_t len = input.dim(1), out_len = layer.output_length(len);
  if (grad_out.shape() != Shape{c_out, out_len}) {
    throw ShapeError("conv1d_backward: grad_out " + shape_str(grad_out.shape()) + " expected " +
                     shape_str({c_out, out_len}));
  }
  Conv1dGrads g{zeros_like(input), zeros_like(layer.kernels), zeros_like(layer.bias)};
  for (std::size_t c = 0; c < c_out; ++c) {
    for (std::size_t t = 0; t < out_len; ++t) {
      const double go = grad_out(c, t);
      if (go == 0.0) continue;
      g.bias[c] += go;
      const std::size_t base = t * layer.stride;
      for (std::size_t i = 0; i < c_in; ++i) {
        const std::size_t w_off = (c * c_in + i) * k_len;
        const std::size_t x_off = i * len + base;
        for (std::size_t k = 0; k < k_len; ++k) {
          g.kernels[w_off + k] += go * input[x_off + k];
          g.input[x_off + k] += go * layer.kernels[w_off + k];
        }
      }
    }
  }
  return g;
}

inline Tensor dense_forward(const DenseLayer& layer, const Tensor& input) {
  detail::check_dense_input(layer, input);
  const std::size_t n_out = layer.out_features(), n_in = layer.in_features();
  Tensor out({n_out});
  for (std::size_t o = 0; o < n_out; ++o) {
    out[o] = layer.bias[o] + dot(layer.weights.data().subspan(o * n_in, n_in), input.data());
  }
  return out;
}

inline DenseGrads dense_backward(const DenseLayer& layer, const Tensor& input, const Tensor& grad_out) {
  detail::check_dense_input(layer, input);
  const std::size_t n_out = layer.out_features(), n_in = layer.in_features();
  if (grad_out.size() != n_out) {
    throw ShapeError("dense_backward: grad_out has " + std::to_string(grad_out.size()) + " values, expected " +
                     std::to_string(n_out));
  }
  DenseGrads g{zeros_like(input), zeros_like(layer.weights), grad_out.reshaped({n_out})};
  for (std::size_t o = 0; o < n_out; ++o) {
    const double go = grad_out[o];
    for (std::size_t i = 0; i < n_in; ++i) {
      g.weights[o * n_in + i] = go * input[i];
      g.input[i] += go * layer.weights[o * n_in + i];
    }
  }
  return g;
}

inline Tensor relu(Tensor x) {
  for (double& v : x.data()) v = v > 0.0 ? v : 0.0;
  return x;
}

/// Gradient of relu given its pre-activation input.
inline Tensor relu_backward(const Tensor& pre, Tensor grad_out) {
  pre.require_same_shape(grad_out, "relu_backward");
  for (std::size_t i = 0; i < pre.size(); ++i)
    if (pre[i] <= 0.0) grad_out[i] = 0.0;
  return grad_out;
}

inline Tensor sigmoid(Tensor x) {
  for (double& v : x.data()) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return x;
}

/// Gradient of sigmoid given its output.
inline Tensor sigmoid_backward(const Tensor& out, Tensor grad_out) {
  out.require_same_shape(grad_out, "sigmoid_backward");
  for (std::size_t i = 0; i < out.size(); ++i) grad_out[i] *= out[i] * (1.0 - out[i]);
  return grad_out;
}

/// In-place softmax over a contiguous row, max-subtracted.
inline void softmax_inplace(std::span<double> row) {
  double mx = row[0];
  for (double v : row) mx = std::max(mx, v);
  double total = 0.0;
  for (double& v : row) {
    v = std::exp(v - mx);
    total += v;
  }
  for (double& v : row) v /= total;
}

inline Tensor softmax(Tensor x) {
  softmax_inplace(x.data());
  return x;
}

/// Row-wise gradient: g_in = p * (g_out - <p, g_out>).
inline void softmax_backward_inplace(std::span<const double> probs, std::span<double> grad) {
  const double inner = dot(probs, grad);
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = probs[i] * (grad[i] - inner);
}

inline Tensor softmax_backward(const Tensor& probs, Tensor grad_out) {
  probs.require_same_shape(grad_out, "softmax_backward");
  softmax_backward_inplace(probs.data(), grad_out.data());
  return grad_out;
}

/// Softmax along the last axis of a [rows x cols] tensor.
inline Tensor softmax_rows(Tensor x) {
  const std::size_t cols = x.dim(1);
  for (std::size_t r = 0; r < x.dim(0); ++r) softmax_inplace(x.data().subspan(r * cols, cols));
  return x;
}

}  // namespace capsnoise
