#pragma once

// Finite-difference self-check of every hand-written backward pass on random
// tiny configurations. Used by `capsnoise gradcheck` and the acceptance run.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "capsnoise/attacks.hpp"
#include "capsnoise/capsnet.hpp"
#include "capsnoise/cnn.hpp"
#include "capsnoise/gradcheck.hpp"
#include "capsnoise/layers.hpp"

namespace capsnoise {

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::size_t n_configs = 10;
  double tolerance = 1e-4;
  double step = 1e-5;
  // Test-only negative control: the named component's analytic gradient is
  // scaled by 1.01 before comparison, which must make the check fail.
  std::string inject_fault;
};

struct ComponentResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t n_checks = 0;
  bool passed = true;
};

struct GradcheckReport {
  std::vector<ComponentResult> components;
  double tolerance = 0.0;

  [[nodiscard]] bool passed() const {
    return std::all_of(components.begin(), components.end(), [](const ComponentResult& c) { return c.passed; });
  }
};

inline const std::vector<std::string>& gradcheck_components() {
  static const std::vector<std::string> names = {"conv1d", "dense",   "relu",          "sigmoid", "softmax",
                                                 "squash", "votes",   "routing",       "margin_loss",
                                                 "cross_entropy", "cnn", "capsnet"};
  return names;
}

namespace detail {

class GradcheckRun {
public:
  explicit GradcheckRun(const GradcheckOptions& o) : opts_(o) {
    for (const auto& n : gradcheck_components()) report_.components.push_back({n});
    report_.tolerance = o.tolerance;
  }

  /// Compare one analytic gradient against central differences of f at x.
  template <class F>
  void compare(const std::string& component, Tensor analytic, F&& f, const Tensor& x) {
    if (component == opts_.inject_fault) analytic *= 1.01;
    const Tensor numeric = finite_difference_grad(f, x, opts_.step);
    const double err = relative_error(analytic, numeric);
    ComponentResult& r = find(component);
    r.max_rel_error = std::max(r.max_rel_error, err);
    ++r.n_checks;
    if (!(err <= opts_.tolerance)) r.passed = false;
  }

  /// Check every tensor of a parameter struct plus the input gradient of a scalar model loss.
  template <class Params, class Loss>
  void compare_params(const std::string& component, Params& params, Params analytic_params, const Tensor& analytic_input,
                      Tensor x, Loss&& loss) {
    std::vector<Tensor*> analytic;
    for_each_tensor(analytic_params, [&](const std::string&, Tensor& t) { analytic.push_back(&t); });
    std::size_t k = 0;
    for_each_tensor(params, [&](const std::string&, Tensor& t) {
      const Tensor saved = t;
      compare(
          component, *analytic[k++],
          [&](const Tensor& probe) {
            t = probe;
            return loss(x);
          },
          saved);
      t = saved;
    });
    compare(component, analytic_input, loss, x);
  }

  GradcheckReport& report() { return report_; }

private:
  ComponentResult& find(const std::string& name) {
    for (ComponentResult& r : report_.components)
      if (r.name == name) return r;
    throw UsageError("gradcheck: unknown component '" + name + "'");
  }

  GradcheckOptions opts_;
  GradcheckReport report_;
};

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline Tensor uniform_tensor(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

inline void perturb(Tensor& t, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data()) v = dist(rng);
}

/// Random small trunk: L in [12, 20], a few channels, short kernels.
inline TrunkConfig random_trunk(std::mt19937_64& rng, std::size_t capsule_dim) {
  TrunkConfig t;
  t.signal_length = pick(rng, 12, 20);
  t.conv_channels = pick(rng, 2, 3);
  t.conv_kernel = pick(rng, 3, 5);
  t.primary_channels = capsule_dim * pick(rng, 1, 2);
  t.primary_kernel = pick(rng, 3, 5);
  t.primary_stride = pick(rng, 1, 2);
  return t;
}

inline void check_layers(GradcheckRun& run, std::mt19937_64& rng) {
  {
    const std::size_t c_in = pick(rng, 1, 3), c_out = pick(rng, 1, 4), k = pick(rng, 1, 5), stride = pick(rng, 1, 3);
    const std::size_t len = k + pick(rng, 0, 8);
    Conv1dLayer layer = make_conv1d(c_in, c_out, k, stride);
    perturb(layer.kernels, rng, -1, 1);
    perturb(layer.bias, rng, -1, 1);
    const Tensor x = uniform_tensor({c_in, len}, rng, -1, 1);
    const Tensor probe = uniform_tensor({c_out, layer.output_length(len)}, rng, -1, 1);
    const Conv1dGrads g = conv1d_backward(layer, x, probe);
    const auto loss = [&] { return dot(conv1d_forward(layer, x).data(), probe.data()); };
    run.compare("conv1d", g.input, [&](const Tensor& t) { return dot(conv1d_forward(layer, t).data(), probe.data()); }, x);
    for (auto [analytic, target] : {std::pair{&g.kernels, &layer.kernels}, std::pair{&g.bias, &layer.bias}}) {
      const Tensor saved = *target;
      run.compare(
          "conv1d", *analytic,
          [&](const Tensor& t) {
            *target = t;
            return loss();
          },
          saved);
      *target = saved;
    }
  }
  {
    const std::size_t n_in = pick(rng, 1, 6), n_out = pick(rng, 1, 6);
    DenseLayer layer = make_dense(n_in, n_out);
    perturb(layer.weights, rng, -1, 1);
    perturb(layer.bias, rng, -1, 1);
    const Tensor x = uniform_tensor({n_in}, rng, -1, 1);
    const Tensor probe = uniform_tensor({n_out}, rng, -1, 1);
    const DenseGrads g = dense_backward(layer, x, probe);
    const auto loss = [&] { return dot(dense_forward(layer, x).data(), probe.data()); };
    run.compare("dense", g.input, [&](const Tensor& t) { return dot(dense_forward(layer, t).data(), probe.data()); }, x);
    for (auto [analytic, target] : {std::pair{&g.weights, &layer.weights}, std::pair{&g.bias, &layer.bias}}) {
      const Tensor saved = *target;
      run.compare(
          "dense", *analytic,
          [&](const Tensor& t) {
            *target = t;
            return loss();
          },
          saved);
      *target = saved;
    }
  }
  {
    const std::size_t n = pick(rng, 2, 8);
    // Keep relu inputs away from the kink so central differences are exact.
    Tensor x = uniform_tensor({n}, rng, 0.05, 1);
    for (std::size_t i = 0; i < n; i += 2) x[i] = -x[i];
    const Tensor probe = uniform_tensor({n}, rng, -1, 1);
    run.compare("relu", relu_backward(x, probe), [&](const Tensor& t) { return dot(relu(t).data(), probe.data()); }, x);
    const Tensor y = sigmoid(x);
    run.compare("sigmoid", sigmoid_backward(y, probe), [&](const Tensor& t) { return dot(sigmoid(t).data(), probe.data()); },
                x);
    const Tensor p = softmax(x);
    run.compare("softmax", softmax_backward(p, probe), [&](const Tensor& t) { return dot(softmax(t).data(), probe.data()); },
                x);
    const Tensor s = uniform_tensor({n}, rng, -1, 1);
    run.compare("squash", squash_backward(s, probe), [&](const Tensor& t) { return dot(squash(t).data(), probe.data()); }, s);
  }
}

inline void check_capsule_parts(GradcheckRun& run, std::mt19937_64& rng) {
  const std::size_t np = pick(rng, 1, 6), nc = pick(rng, 1, 5), dc = pick(rng, 1, 4), dp = pick(rng, 1, 4);
  const std::size_t iters = pick(rng, 1, 3);
  const Tensor u = uniform_tensor({np, dp}, rng, -1, 1);
  Tensor W = uniform_tensor({np, nc, dc, dp}, rng, -1, 1);
  const Tensor probe_votes = uniform_tensor({np, nc, dc}, rng, -1, 1);
  const VoteGrads vg = compute_votes_backward(u, W, probe_votes);
  run.compare("votes", vg.u, [&](const Tensor& t) { return dot(compute_votes(t, W).data(), probe_votes.data()); }, u);
  run.compare("votes", vg.W, [&](const Tensor& t) { return dot(compute_votes(u, t).data(), probe_votes.data()); }, W);

  const Tensor votes = uniform_tensor({np, nc, dc}, rng, -1, 1);
  const Tensor probe_v = uniform_tensor({nc, dc}, rng, -1, 1);
  const RoutingResult r = dynamic_routing(votes, iters);
  run.compare(
      "routing", dynamic_routing_backward(votes, r, probe_v),
      [&](const Tensor& t) { return dot(dynamic_routing(t, iters).v.data(), probe_v.data()); }, votes);

  const std::size_t n_classes = pick(rng, 2, 6), label = pick(rng, 0, n_classes - 1);
  const MarginParams mp{};
  const Tensor norms = uniform_tensor({n_classes}, rng, 0.01, 0.99);
  run.compare("margin_loss", margin_loss_backward(norms, label, mp),
              [&](const Tensor& t) { return margin_loss(t, label, mp); }, norms);
  const Tensor logits = uniform_tensor({n_classes}, rng, -3, 3);
  run.compare("cross_entropy", cross_entropy_backward(logits, label),
              [&](const Tensor& t) { return cross_entropy_loss(t, label); }, logits);
}

inline double min_abs(const Tensor& t) {
  double m = std::numeric_limits<double>::infinity();
  for (double v : t.data()) m = std::min(m, std::abs(v));
  return m;
}

/// Central differences are only a trustworthy oracle away from relu kinks and
/// when the class capsules carry signal; draws with every trunk relu dead give
/// near-zero capsules whose gradients sit at the roundoff floor.
inline bool well_conditioned(const CapsNetCache& c) {
  double max_norm = 0.0;
  for (double v : c.norms.data()) max_norm = std::max(max_norm, v);
  return max_norm > 1e-2 && min_abs(c.conv_pre) > 1e-3 && min_abs(c.decoder.pre1) > 1e-3 &&
         min_abs(c.decoder.pre2) > 1e-3;
}

inline bool well_conditioned(const CnnCache& c) { return min_abs(c.pre1) > 1e-3 && min_abs(c.pre2) > 1e-3; }

inline bool try_check_cnn(GradcheckRun& run, std::mt19937_64& rng) {
  CnnConfig cfg;
  cfg.trunk = random_trunk(rng, pick(rng, 1, 3));
  cfg.num_classes = pick(rng, 2, 5);
  cfg.seed = rng();
  CnnModel m = make_cnn(cfg);
  perturb(m.params.conv1.bias, rng, -0.2, 0.2);
  perturb(m.params.conv2.bias, rng, -0.2, 0.2);
  perturb(m.params.head.bias, rng, -0.2, 0.2);
  const Tensor x = uniform_tensor({cfg.trunk.signal_length}, rng, 0, 1);
  const std::size_t label = pick(rng, 0, cfg.num_classes - 1);
  const CnnOutput out = cnn_forward(m, x);
  if (!well_conditioned(out.cache)) return false;
  const CnnGrads g = cnn_backward(m, out, label);
  run.compare_params("cnn", m.params, g.params, g.input, x, [&](const Tensor& t) { return cnn_loss(m, t, label); });
  return true;
}

inline bool try_check_capsnet(GradcheckRun& run, std::mt19937_64& rng) {
  CapsNetConfig cfg;
  cfg.primary_dim = pick(rng, 2, 4);
  cfg.trunk = random_trunk(rng, cfg.primary_dim);
  cfg.num_classes = pick(rng, 2, 5);
  cfg.class_dim = pick(rng, 2, 4);
  cfg.routing_iters = pick(rng, 1, 3);
  cfg.decoder_hidden1 = pick(rng, 3, 6);
  cfg.decoder_hidden2 = pick(rng, 3, 8);
  // A large reconstruction weight keeps the decoder path visible in the total gradient.
  cfg.recon_weight = pick(rng, 0, 1) ? 0.5 : 0.0005;
  cfg.seed = rng();
  CapsNetModel m = make_capsnet(cfg);
  perturb(m.params.W, rng, -1, 1);
  perturb(m.params.conv1.bias, rng, -0.2, 0.2);
  perturb(m.params.primary.bias, rng, -0.2, 0.2);
  perturb(m.params.dec1.bias, rng, -0.2, 0.2);
  perturb(m.params.dec2.bias, rng, -0.2, 0.2);
  const Tensor x = uniform_tensor({cfg.trunk.signal_length}, rng, 0, 1);
  const std::size_t label = pick(rng, 0, cfg.num_classes - 1);
  const CapsNetOutput out = capsnet_forward(m, x, label);
  if (!well_conditioned(out.cache)) return false;
  const CapsNetGrads g = capsnet_backward(m, out.cache, label);
  run.compare_params("capsnet", m.params, g.params, g.input, x, [&](const Tensor& t) { return capsnet_loss(m, t, label); });
  return true;
}

template <class TryCheck>
void check_until_conditioned(const char* what, TryCheck&& try_check) {
  for (int attempt = 0; attempt < 100; ++attempt)
    if (try_check()) return;
  throw NumericError(std::string("gradcheck: no well-conditioned ") + what + " draw in 100 attempts");
}

}  // namespace detail

/// Run every component check on n_configs random instances derived from opts.seed.
inline GradcheckReport run_gradcheck(const GradcheckOptions& opts) {
  if (!opts.inject_fault.empty()) {
    const auto& names = gradcheck_components();
    if (std::find(names.begin(), names.end(), opts.inject_fault) == names.end())
      throw UsageError("gradcheck: unknown component '" + opts.inject_fault + "'");
  }
  if (opts.n_configs == 0) throw UsageError("gradcheck: n_configs must be positive");
  detail::GradcheckRun run(opts);
  for (std::size_t i = 0; i < opts.n_configs; ++i) {
    std::mt19937_64 rng(derive_seed(opts.seed, i));
    detail::check_layers(run, rng);
    detail::check_capsule_parts(run, rng);
    detail::check_until_conditioned("cnn", [&] { return detail::try_check_cnn(run, rng); });
    detail::check_until_conditioned("capsule network", [&] { return detail::try_check_capsnet(run, rng); });
  }
  return run.report();
}

}  // namespace capsnoise
