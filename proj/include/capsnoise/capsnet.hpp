#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "capsnoise/layers.hpp"
#include "capsnoise/tensor.hpp"

namespace capsnoise {

/// Convolutional feature extractor shared (shape-wise) by the capsule network
/// and the CNN baseline: conv (1 -> conv_channels, relu) then a strided conv.
struct TrunkConfig {
  std::size_t signal_length = 64;
  std::size_t conv_channels = 32;
  std::size_t conv_kernel = 9;
  std::size_t primary_channels = 32;
  std::size_t primary_kernel = 9;
  std::size_t primary_stride = 2;

  [[nodiscard]] std::size_t conv_length() const {
    if (signal_length < conv_kernel) throw ShapeError("signal shorter than first conv kernel");
    return signal_length - conv_kernel + 1;
  }
  [[nodiscard]] std::size_t primary_length() const {
    const std::size_t len = conv_length();
    if (len < primary_kernel) throw ShapeError("first conv output shorter than primary kernel");
    return (len - primary_kernel) / primary_stride + 1;
  }

  friend bool operator==(const TrunkConfig&, const TrunkConfig&) = default;
};

struct MarginParams {
  double m_plus = 0.9;
  double m_minus = 0.1;
  double lambda = 0.5;

  friend bool operator==(const MarginParams&, const MarginParams&) = default;
};

struct CapsNetConfig {
  TrunkConfig trunk;
  std::size_t primary_dim = 8;
  std::size_t num_classes = 5;
  std::size_t class_dim = 16;
  std::size_t routing_iters = 3;
  std::size_t decoder_hidden1 = 128;
  std::size_t decoder_hidden2 = 256;
  MarginParams margin;
  double recon_weight = 0.0005;
  std::uint64_t seed = 0;

  [[nodiscard]] std::size_t capsule_types() const { return trunk.primary_channels / primary_dim; }
  [[nodiscard]] std::size_t num_primary() const { return capsule_types() * trunk.primary_length(); }

  void validate() const {
    if (primary_dim == 0 || trunk.primary_channels % primary_dim != 0)
      throw ShapeError("primary_channels must be a positive multiple of primary_dim");
    if (num_classes == 0 || class_dim == 0 || routing_iters == 0 || trunk.primary_stride == 0)
      throw ShapeError("capsnet config: class count, class dim, stride and routing iterations must be positive");
    (void)trunk.primary_length();
  }

  friend bool operator==(const CapsNetConfig&, const CapsNetConfig&) = default;
};

struct CapsNetParams {
  Conv1dLayer conv1;
  Conv1dLayer primary;
  Tensor W;  // [N_p x N_c x d_c x d_p]
  DenseLayer dec1, dec2, dec3;

  friend bool operator==(const CapsNetParams&, const CapsNetParams&) = default;
};

template <class Params, class F>
  requires std::same_as<std::remove_const_t<Params>, CapsNetParams>
void for_each_tensor(Params& p, F&& f) {
  f("conv1.kernels", p.conv1.kernels);
  f("conv1.bias", p.conv1.bias);
  f("primary.kernels", p.primary.kernels);
  f("primary.bias", p.primary.bias);
  f("classcaps.W", p.W);
  f("decoder1.weights", p.dec1.weights);
  f("decoder1.bias", p.dec1.bias);
  f("decoder2.weights", p.dec2.weights);
  f("decoder2.bias", p.dec2.bias);
  f("decoder3.weights", p.dec3.weights);
  f("decoder3.bias", p.dec3.bias);
}

struct CapsNetModel {
  CapsNetConfig config;
  CapsNetParams params;

  friend bool operator==(const CapsNetModel&, const CapsNetModel&) = default;
};

/// Zero-valued parameter set with the shapes implied by `config`.
inline CapsNetParams capsnet_zero_params(const CapsNetConfig& config) {
  config.validate();
  const auto& t = config.trunk;
  CapsNetParams p;
  p.conv1 = make_conv1d(1, t.conv_channels, t.conv_kernel, 1);
  p.primary = make_conv1d(t.conv_channels, t.primary_channels, t.primary_kernel, t.primary_stride);
  p.W = Tensor({config.num_primary(), config.num_classes, config.class_dim, config.primary_dim});
  p.dec1 = make_dense(config.class_dim, config.decoder_hidden1);
  p.dec2 = make_dense(config.decoder_hidden1, config.decoder_hidden2);
  p.dec3 = make_dense(config.decoder_hidden2, t.signal_length);
  return p;
}

/// Seeded fan-in uniform initialization. The vote matrices use the fan-in of a
/// whole class capsule (N_p * d_p) so initial class-capsule norms stay small.
inline CapsNetModel make_capsnet(const CapsNetConfig& config) {
  CapsNetModel m{config, capsnet_zero_params(config)};
  std::mt19937_64 rng(config.seed);
  init_conv1d(m.params.conv1, rng);
  init_conv1d(m.params.primary, rng);
  init_uniform_fan_in(m.params.W, config.num_primary() * config.primary_dim, rng);
  init_dense(m.params.dec1, rng);
  init_dense(m.params.dec2, rng);
  init_dense(m.params.dec3, rng);
  return m;
}

/// True when the parameters are exactly what `make_capsnet` produces for this config.
inline bool is_fresh_init(const CapsNetModel& m) { return make_capsnet(m.config).params == m.params; }

// ---------------------------------------------------------------------------
// Capsule primitives

/// v = (|s|^2 / (1 + |s|^2)) * s / |s|, with squash(0) = 0.
inline void squash_inplace(std::span<const double> s, std::span<double> v) {
  const double n2 = dot(s, s);
  if (n2 == 0.0) {
    std::fill(v.begin(), v.end(), 0.0);
    return;
  }
  const double n = std::sqrt(n2);
  const double factor = n / (1.0 + n2);
  for (std::size_t i = 0; i < s.size(); ++i) v[i] = factor * s[i];
}

inline Tensor squash(const Tensor& s) {
  Tensor v = zeros_like(s);
  squash_inplace(s.data(), v.data());
  return v;
}

/// ds = f(n) dv + (f'(n)/n) <s, dv> s with f(n) = n / (1 + n^2).
inline void squash_backward_inplace(std::span<const double> s, std::span<const double> grad_v,
                                    std::span<double> grad_s) {
  const double n2 = dot(s, s);
  if (n2 == 0.0) {
    std::fill(grad_s.begin(), grad_s.end(), 0.0);
    return;
  }
  const double n = std::sqrt(n2);
  const double denom = 1.0 + n2;
  const double f = n / denom;
  const double fprime_over_n = (1.0 - n2) / (denom * denom * n);
  const double proj = dot(s, grad_v) * fprime_over_n;
  for (std::size_t i = 0; i < s.size(); ++i) grad_s[i] = f * grad_v[i] + proj * s[i];
}

inline Tensor squash_backward(const Tensor& s, const Tensor& grad_v) {
  s.require_same_shape(grad_v, "squash_backward");
  Tensor g = zeros_like(s);
  squash_backward_inplace(s.data(), grad_v.data(), g.data());
  return g;
}

/// Squash every row of a [rows x d] tensor.
inline Tensor squash_rows(const Tensor& s) {
  Tensor v = zeros_like(s);
  const std::size_t d = s.dim(1);
  for (std::size_t r = 0; r < s.dim(0); ++r) squash_inplace(s.data().subspan(r * d, d), v.data().subspan(r * d, d));
  return v;
}

inline Tensor squash_rows_backward(const Tensor& s, const Tensor& grad_v) {
  Tensor g = zeros_like(s);
  const std::size_t d = s.dim(1);
  for (std::size_t r = 0; r < s.dim(0); ++r)
    squash_backward_inplace(s.data().subspan(r * d, d), grad_v.data().subspan(r * d, d),
                            g.data().subspan(r * d, d));
  return g;
}

inline Tensor row_norms(const Tensor& v) {
  const std::size_t d = v.dim(1);
  Tensor n({v.dim(0)});
  for (std::size_t r = 0; r < v.dim(0); ++r) {
    auto row = v.data().subspan(r * d, d);
    n[r] = std::sqrt(dot(row, row));
  }
  return n;
}

/// votes[i,j,:] = W[i,j] * u[i]   (u: [N_p x d_p], W: [N_p x N_c x d_c x d_p]).
inline Tensor compute_votes(const Tensor& u, const Tensor& W) {
  if (u.rank() != 2 || W.rank() != 4 || W.dim(0) != u.dim(0) || W.dim(3) != u.dim(1)) {
    throw ShapeError("compute_votes: u " + shape_str(u.shape()) + " incompatible with W " + shape_str(W.shape()));
  }
  const std::size_t np = W.dim(0), nc = W.dim(1), dc = W.dim(2), dp = W.dim(3);
  Tensor votes({np, nc, dc});
  for (std::size_t i = 0; i < np; ++i) {
    auto ui = u.data().subspan(i * dp, dp);
    for (std::size_t j = 0; j < nc; ++j)
      for (std::size_t a = 0; a < dc; ++a) votes(i, j, a) = dot(W.data().subspan(((i * nc + j) * dc + a) * dp, dp), ui);
  }
  return votes;
}

struct VoteGrads {
  Tensor u;
  Tensor W;
};

inline VoteGrads compute_votes_backward(const Tensor& u, const Tensor& W, const Tensor& grad_votes) {
  const std::size_t np = W.dim(0), nc = W.dim(1), dc = W.dim(2), dp = W.dim(3);
  if (grad_votes.shape() != Shape{np, nc, dc}) throw ShapeError("compute_votes_backward: bad grad shape");
  VoteGrads g{zeros_like(u), zeros_like(W)};
  for (std::size_t i = 0; i < np; ++i)
    for (std::size_t j = 0; j < nc; ++j)
      for (std::size_t a = 0; a < dc; ++a) {
        const double go = grad_votes(i, j, a);
        const std::size_t off = ((i * nc + j) * dc + a) * dp;
        for (std::size_t b = 0; b < dp; ++b) {
          g.W[off + b] = go * u(i, b);
          g.u(i, b) += go * W[off + b];
        }
      }
  return g;
}

// ---------------------------------------------------------------------------
// Dynamic routing

/// Routing logits and coupling coefficients, both [N_p x N_c].
struct RoutingState {
  Tensor b;
  Tensor c;
};

/// Values produced by one routing iteration; kept for backpropagation.
struct RoutingIteration {
  Tensor c;  // [N_p x N_c]
  Tensor s;  // [N_c x d_c]
  Tensor v;  // [N_c x d_c]
};

struct RoutingResult {
  Tensor v;  // final class capsules [N_c x d_c]
  RoutingState state;
  std::vector<RoutingIteration> history;
};

inline RoutingResult dynamic_routing(const Tensor& votes, std::size_t iters) {
  if (iters == 0) throw ShapeError("dynamic_routing: iterations must be >= 1");
  if (votes.rank() != 3) throw ShapeError("dynamic_routing: votes must be [N_p x N_c x d_c]");
  const std::size_t np = votes.dim(0), nc = votes.dim(1), dc = votes.dim(2);
  RoutingResult out;
  Tensor b({np, nc});
  for (std::size_t r = 1; r <= iters; ++r) {
    RoutingIteration it{softmax_rows(b), Tensor({nc, dc}), Tensor({nc, dc})};
    for (std::size_t i = 0; i < np; ++i)
      for (std::size_t j = 0; j < nc; ++j) {
        const double cij = it.c(i, j);
        for (std::size_t a = 0; a < dc; ++a) it.s(j, a) += cij * votes(i, j, a);
      }
    it.v = squash_rows(it.s);
    out.state = {b, it.c};
    if (r < iters) {
      for (std::size_t i = 0; i < np; ++i)
        for (std::size_t j = 0; j < nc; ++j)
          b(i, j) += dot(votes.data().subspan((i * nc + j) * dc, dc), it.v.data().subspan(j * dc, dc));
    }
    out.history.push_back(std::move(it));
  }
  out.v = out.history.back().v;
  return out;
}

/// Gradient of the final class capsules with respect to the votes, through
/// every unrolled routing iteration (logit updates included).
inline Tensor dynamic_routing_backward(const Tensor& votes, const RoutingResult& routing, const Tensor& grad_v) {
  const std::size_t np = votes.dim(0), nc = votes.dim(1), dc = votes.dim(2);
  Tensor grad_votes = zeros_like(votes);
  Tensor grad_b_next({np, nc});  // gradient w.r.t. the logits fed to iteration r + 1
  const std::size_t iters = routing.history.size();
  for (std::size_t r = iters; r-- > 0;) {
    const RoutingIteration& it = routing.history[r];
    Tensor gv = (r + 1 == iters) ? grad_v : Tensor({nc, dc});
    if (r + 1 < iters) {
      // b_{r+1}[i,j] = b_r[i,j] + <votes[i,j], v_j>
      for (std::size_t i = 0; i < np; ++i)
        for (std::size_t j = 0; j < nc; ++j) {
          const double gb = grad_b_next(i, j);
          if (gb == 0.0) continue;
          for (std::size_t a = 0; a < dc; ++a) {
            gv(j, a) += gb * votes(i, j, a);
            grad_votes(i, j, a) += gb * it.v(j, a);
          }
        }
    }
    const Tensor gs = squash_rows_backward(it.s, gv);
    Tensor gc({np, nc});
    for (std::size_t i = 0; i < np; ++i)
      for (std::size_t j = 0; j < nc; ++j) {
        const double cij = it.c(i, j);
        double acc = 0.0;
        for (std::size_t a = 0; a < dc; ++a) {
          acc += gs(j, a) * votes(i, j, a);
          grad_votes(i, j, a) += cij * gs(j, a);
        }
        gc(i, j) = acc;
      }
    for (std::size_t i = 0; i < np; ++i) {
      softmax_backward_inplace(it.c.data().subspan(i * nc, nc), gc.data().subspan(i * nc, nc));
      for (std::size_t j = 0; j < nc; ++j) grad_b_next(i, j) += gc(i, j);
    }
  }
  return grad_votes;
}

// ---------------------------------------------------------------------------
// Losses

inline double margin_loss(const Tensor& norms, std::size_t label, const MarginParams& mp) {
  if (label >= norms.size()) throw DataError("margin_loss: label " + std::to_string(label) + " out of range");
  double loss = 0.0;
  for (std::size_t k = 0; k < norms.size(); ++k) {
    if (k == label) {
      const double h = std::max(0.0, mp.m_plus - norms[k]);
      loss += h * h;
    } else {
      const double h = std::max(0.0, norms[k] - mp.m_minus);
      loss += mp.lambda * h * h;
    }
  }
  return loss;
}

inline Tensor margin_loss_backward(const Tensor& norms, std::size_t label, const MarginParams& mp) {
  Tensor g = zeros_like(norms);
  for (std::size_t k = 0; k < norms.size(); ++k) {
    g[k] = (k == label) ? -2.0 * std::max(0.0, mp.m_plus - norms[k])
                        : 2.0 * mp.lambda * std::max(0.0, norms[k] - mp.m_minus);
  }
  return g;
}

inline double mse(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ShapeError("mse: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

// ---------------------------------------------------------------------------
// Decoder

struct DecoderCache {
  std::size_t selected = 0;
  Tensor input;  // selected capsule [d_c]
  Tensor pre1, h1, pre2, h2, pre3;
  Tensor output;  // [L]
};

inline std::size_t argmax(const Tensor& t) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < t.size(); ++i)
    if (t[i] > t[best]) best = i;
  return best;
}

/// Decode the `selected` class capsule; all other capsules are masked out.
inline DecoderCache decode(const CapsNetParams& p, const Tensor& v, std::size_t selected) {
  const std::size_t dc = v.dim(1);
  if (selected >= v.dim(0)) throw DataError("decode: class " + std::to_string(selected) + " out of range");
  DecoderCache c;
  c.selected = selected;
  c.input = Tensor({dc}, std::vector<double>(v.data().begin() + static_cast<std::ptrdiff_t>(selected * dc),
                                             v.data().begin() + static_cast<std::ptrdiff_t>((selected + 1) * dc)));
  c.pre1 = dense_forward(p.dec1, c.input);
  c.h1 = relu(c.pre1);
  c.pre2 = dense_forward(p.dec2, c.h1);
  c.h2 = relu(c.pre2);
  c.pre3 = dense_forward(p.dec3, c.h2);
  c.output = sigmoid(c.pre3);
  return c;
}

/// Reconstruct the signal from class capsules `v`. With a label the true class
/// is decoded (training); without one the longest capsule is (inference).
inline Tensor reconstruct(const CapsNetModel& m, const Tensor& v, std::optional<std::size_t> label = std::nullopt) {
  const std::size_t sel = label ? *label : argmax(row_norms(v));
  return decode(m.params, v, sel).output;
}

// ---------------------------------------------------------------------------
// Full model

struct CapsNetCache {
  Tensor x;          // [1 x L]
  Tensor conv_pre;   // [C1 x L1]
  Tensor conv_out;   // relu(conv_pre)
  Tensor prim_pre;   // [C_p x T]
  Tensor u_raw;      // [N_p x d_p] before squash
  Tensor u;          // squashed primary capsules
  Tensor votes;      // [N_p x N_c x d_c]
  RoutingResult routing;
  Tensor norms;      // [N_c]
  DecoderCache decoder;
  std::optional<std::size_t> mask_label;
};

struct CapsNetOutput {
  Tensor norms;  // class-capsule lengths, each in [0, 1)
  Tensor recon;  // [L]
  CapsNetCache cache;
};

/// Conv channels are grouped into capsule types of primary_dim channels; capsule
/// (type g, position t) has index g * T + t.
inline Tensor primary_to_capsules(const Tensor& prim, std::size_t dp) {
  const std::size_t cp = prim.dim(0), len = prim.dim(1), types = cp / dp;
  Tensor u({types * len, dp});
  for (std::size_t g = 0; g < types; ++g)
    for (std::size_t d = 0; d < dp; ++d)
      for (std::size_t t = 0; t < len; ++t) u(g * len + t, d) = prim(g * dp + d, t);
  return u;
}

inline Tensor capsules_to_primary(const Tensor& u, std::size_t cp, std::size_t len) {
  const std::size_t dp = u.dim(1), types = cp / dp;
  Tensor prim({cp, len});
  for (std::size_t g = 0; g < types; ++g)
    for (std::size_t d = 0; d < dp; ++d)
      for (std::size_t t = 0; t < len; ++t) prim(g * dp + d, t) = u(g * len + t, d);
  return prim;
}

inline Tensor as_signal_row(const Tensor& x, std::size_t expected_len) {
  if (x.size() != expected_len || (x.rank() == 2 && x.dim(0) != 1) || x.rank() > 2) {
    throw ShapeError("expected a signal of length " + std::to_string(expected_len) + ", got " +
                     shape_str(x.shape()));
  }
  return x.reshaped({1, expected_len});
}

/// conv -> primary capsules (squashed) -> votes -> routing -> norms -> decoder.
inline CapsNetOutput capsnet_forward(const CapsNetModel& m, const Tensor& x,
                                     std::optional<std::size_t> mask_label = std::nullopt) {
  const CapsNetConfig& cfg = m.config;
  const CapsNetParams& p = m.params;
  CapsNetCache c;
  c.x = as_signal_row(x, cfg.trunk.signal_length);
  c.conv_pre = conv1d_forward(p.conv1, c.x);
  c.conv_out = relu(c.conv_pre);
  c.prim_pre = conv1d_forward(p.primary, c.conv_out);
  c.u_raw = primary_to_capsules(c.prim_pre, cfg.primary_dim);
  c.u = squash_rows(c.u_raw);
  c.votes = compute_votes(c.u, p.W);
  c.routing = dynamic_routing(c.votes, cfg.routing_iters);
  c.norms = row_norms(c.routing.v);
  c.mask_label = mask_label;
  c.decoder = decode(p, c.routing.v, mask_label ? *mask_label : argmax(c.norms));
  CapsNetOutput out{c.norms, c.decoder.output, {}};
  out.cache = std::move(c);
  return out;
}

/// Margin loss plus recon_weight * mse(recon, x). Requires a forward pass masked with `label`.
inline double capsnet_loss(const CapsNetModel& m, const CapsNetOutput& out, std::size_t label) {
  if (out.cache.mask_label != label) throw UsageError("capsnet_loss: forward pass was not masked with this label");
  return margin_loss(out.norms, label, m.config.margin) +
         m.config.recon_weight * mse(out.recon, out.cache.x);
}

/// Convenience: forward with label masking and return the total loss.
inline double capsnet_loss(const CapsNetModel& m, const Tensor& x, std::size_t label) {
  return capsnet_loss(m, capsnet_forward(m, x, label), label);
}

inline std::size_t capsnet_predict(const CapsNetModel& m, const Tensor& x) {
  return argmax(capsnet_forward(m, x).norms);
}

struct CapsNetGrads {
  CapsNetParams params;
  Tensor input;  // [L]
};

inline CapsNetGrads capsnet_backward(const CapsNetModel& m, const CapsNetCache& c, std::size_t label) {
  if (c.mask_label != label) throw UsageError("capsnet_backward: cache was not produced with this label");
  const CapsNetConfig& cfg = m.config;
  const CapsNetParams& p = m.params;
  const std::size_t len = cfg.trunk.signal_length, dc = cfg.class_dim;
  CapsNetGrads g{capsnet_zero_params(cfg), Tensor({len})};

  // Reconstruction term.
  const DecoderCache& d = c.decoder;
  Tensor g_recon({len});
  const double scale = cfg.recon_weight * 2.0 / static_cast<double>(len);
  for (std::size_t t = 0; t < len; ++t) {
    g_recon[t] = scale * (d.output[t] - c.x[t]);
    g.input[t] -= g_recon[t];
  }
  const DenseGrads g3 = dense_backward(p.dec3, d.h2, sigmoid_backward(d.output, g_recon));
  const DenseGrads g2 = dense_backward(p.dec2, d.h1, relu_backward(d.pre2, g3.input));
  const DenseGrads g1 = dense_backward(p.dec1, d.input, relu_backward(d.pre1, g2.input));
  g.params.dec3 = {g3.weights, g3.bias};
  g.params.dec2 = {g2.weights, g2.bias};
  g.params.dec1 = {g1.weights, g1.bias};

  // Margin term through the capsule lengths.
  const Tensor& v = c.routing.v;
  Tensor gv = zeros_like(v);
  const Tensor g_norm = margin_loss_backward(c.norms, label, cfg.margin);
  for (std::size_t j = 0; j < cfg.num_classes; ++j) {
    if (c.norms[j] == 0.0) continue;
    for (std::size_t a = 0; a < dc; ++a) gv(j, a) = g_norm[j] * v(j, a) / c.norms[j];
  }
  for (std::size_t a = 0; a < dc; ++a) gv(d.selected, a) += g1.input[a];

  const Tensor g_votes = dynamic_routing_backward(c.votes, c.routing, gv);
  const VoteGrads gvote = compute_votes_backward(c.u, p.W, g_votes);
  g.params.W = gvote.W;
  const Tensor g_uraw = squash_rows_backward(c.u_raw, gvote.u);
  const Tensor g_prim = capsules_to_primary(g_uraw, c.prim_pre.dim(0), c.prim_pre.dim(1));
  const Conv1dGrads gp = conv1d_backward(p.primary, c.conv_out, g_prim);
  g.params.primary.kernels = gp.kernels;
  g.params.primary.bias = gp.bias;
  const Conv1dGrads gc = conv1d_backward(p.conv1, c.x, relu_backward(c.conv_pre, gp.input));
  g.params.conv1.kernels = gc.kernels;
  g.params.conv1.bias = gc.bias;
  for (std::size_t t = 0; t < len; ++t) g.input[t] += gc.input[t];
  return g;
}

}  // namespace capsnoise
