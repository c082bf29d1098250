#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "capsnoise/error.hpp"
#include "capsnoise/tensor.hpp"

namespace capsnoise {

/// Parameters of the geometric Brownian motion ds/s = mu dt + sigma db that
/// randomizes manual fault magnitudes.
struct NoiseMoveParams {
  double mu = 0.1;
  double sigma = 0.3;
  double dt = 1.0 / 64.0;
  double s0 = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!std::isfinite(mu) || !std::isfinite(sigma) || !(sigma >= 0.0))
      throw UsageError("noise move: sigma must be finite and >= 0");
    if (!std::isfinite(dt) || !(dt > 0.0)) throw UsageError("noise move: dt must be > 0");
    if (!std::isfinite(s0) || !(s0 > 0.0)) throw UsageError("noise move: s0 must be > 0");
  }

  friend bool operator==(const NoiseMoveParams&, const NoiseMoveParams&) = default;
};

/// Defaults with dt = 1/L so a path spanning one signal covers unit time.
inline NoiseMoveParams default_noise_params(std::size_t signal_length) {
  NoiseMoveParams p;
  p.dt = 1.0 / static_cast<double>(signal_length);
  return p;
}

/// Exact log-normal stepping: s[t+1] = s[t] * exp((mu - sigma^2/2) dt + sigma sqrt(dt) z_t).
/// The log-level is accumulated and exponentiated per step, so sigma = 0 gives
/// s0 * exp(mu t dt) up to summation rounding and every value stays positive.
inline Tensor noise_move_path(const NoiseMoveParams& p, std::size_t n_steps) {
  p.validate();
  if (n_steps == 0) throw UsageError("noise move: n_steps must be >= 1");
  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double drift = (p.mu - 0.5 * p.sigma * p.sigma) * p.dt;
  const double vol = p.sigma * std::sqrt(p.dt);
  Tensor path({n_steps + 1});
  path[0] = p.s0;
  double log_level = 0.0;
  for (std::size_t t = 0; t < n_steps; ++t) {
    const double z = normal(rng);
    log_level += drift + vol * z;
    path[t + 1] = p.s0 * std::exp(log_level);
  }
  return path;
}

/// s[T]/s0 - 1 for a fresh path of `horizon_steps` steps.
inline double sample_magnitude(const NoiseMoveParams& p, std::size_t horizon_steps) {
  const Tensor path = noise_move_path(p, horizon_steps);
  return path[horizon_steps] / p.s0 - 1.0;
}

}  // namespace capsnoise
