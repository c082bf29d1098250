#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "capsnoise/capsnet.hpp"
#include "capsnoise/cnn.hpp"
#include "capsnoise/data.hpp"
#include "capsnoise/noise_move.hpp"

namespace capsnoise {

enum class DriftDirection { increasing, decreasing };
enum class LagDirection { forward, backward };

struct OffsetAttack {
  double scale = 0.2;
  NoiseMoveParams noise;
  friend bool operator==(const OffsetAttack&, const OffsetAttack&) = default;
};

struct DriftAttack {
  DriftDirection direction = DriftDirection::increasing;
  double scale = 0.2;
  NoiseMoveParams noise;
  friend bool operator==(const DriftAttack&, const DriftAttack&) = default;
};

struct LagAttack {
  LagDirection direction = LagDirection::forward;
  double max_fraction = 0.1;  // in (0, 0.5]
  NoiseMoveParams noise;
  friend bool operator==(const LagAttack&, const LagAttack&) = default;
};

struct FgsmAttack {
  double alpha = 0.01;
  friend bool operator==(const FgsmAttack&, const FgsmAttack&) = default;
};

using AttackSpec = std::variant<OffsetAttack, DriftAttack, LagAttack, FgsmAttack>;

/// offset | drift-inc | drift-dec | lag-fwd | lag-bwd | fgsm
inline std::string attack_name(const AttackSpec& spec) {
  struct Visitor {
    std::string operator()(const OffsetAttack&) const { return "offset"; }
    std::string operator()(const DriftAttack& d) const {
      return d.direction == DriftDirection::increasing ? "drift-inc" : "drift-dec";
    }
    std::string operator()(const LagAttack& l) const { return l.direction == LagDirection::forward ? "lag-fwd" : "lag-bwd"; }
    std::string operator()(const FgsmAttack&) const { return "fgsm"; }
  };
  return std::visit(Visitor{}, spec);
}

inline const std::vector<std::string>& attack_names() {
  static const std::vector<std::string> names = {"offset", "drift-inc", "drift-dec", "lag-fwd", "lag-bwd", "fgsm"};
  return names;
}

inline bool is_manual(const AttackSpec& spec) { return !std::holds_alternative<FgsmAttack>(spec); }

struct AttackDefaults {
  NoiseMoveParams noise;
  double scale = 0.2;
  double lag_max_fraction = 0.1;
  double alpha = 0.01;
};

inline AttackDefaults default_attack_settings(std::size_t signal_length) {
  return {default_noise_params(signal_length), 0.2, 0.1, 0.01};
}

inline AttackSpec make_attack_spec(std::string_view name, const AttackDefaults& d) {
  if (name == "offset") return OffsetAttack{d.scale, d.noise};
  if (name == "drift-inc") return DriftAttack{DriftDirection::increasing, d.scale, d.noise};
  if (name == "drift-dec") return DriftAttack{DriftDirection::decreasing, d.scale, d.noise};
  if (name == "lag-fwd") return LagAttack{LagDirection::forward, d.lag_max_fraction, d.noise};
  if (name == "lag-bwd") return LagAttack{LagDirection::backward, d.lag_max_fraction, d.noise};
  if (name == "fgsm") return FgsmAttack{d.alpha};
  throw UsageError("unknown attack '" + std::string(name) + "'");
}

inline void validate_spec(const AttackSpec& spec) {
  if (const auto* l = std::get_if<LagAttack>(&spec)) {
    if (!(l->max_fraction > 0.0 && l->max_fraction <= 0.5)) throw UsageError("lag max_fraction must lie in (0, 0.5]");
  }
  if (const auto* f = std::get_if<FgsmAttack>(&spec)) {
    if (!std::isfinite(f->alpha) || f->alpha < 0.0) throw UsageError("fgsm alpha must be finite and >= 0");
  }
  std::visit(
      [](const auto& s) {
        if constexpr (requires { s.noise; }) s.noise.validate();
        if constexpr (requires { s.scale; })
          if (!std::isfinite(s.scale)) throw UsageError("attack scale must be finite");
      },
      spec);
}

struct AttackedSample {
  Tensor original;
  Tensor attacked;
  AttackSpec spec;
  double realized_magnitude = 0.0;
  std::size_t label = 0;
  std::size_t source_index = 0;
  std::uint64_t sub_seed = 0;

  friend bool operator==(const AttackedSample&, const AttackedSample&) = default;
};

// ---------------------------------------------------------------------------
// Manual sensor faults. Randomness comes only from the spec's noise seed.

/// attacked[t] = x[t] + m with m = scale * (s_L / s0 - 1).
inline AttackedSample offset_attack(const Tensor& x, const OffsetAttack& spec) {
  const double m = spec.scale * sample_magnitude(spec.noise, x.size());
  Tensor attacked = x;
  for (double& v : attacked.data()) v += m;
  return {x, std::move(attacked), spec, m};
}

/// attacked[t] = x[t] +/- scale * (s[t]/s0 - 1) along one path spanning the signal.
inline AttackedSample drift_attack(const Tensor& x, const DriftAttack& spec) {
  const std::size_t len = x.size();
  const double sign = spec.direction == DriftDirection::increasing ? 1.0 : -1.0;
  Tensor attacked = x;
  double last = 0.0;
  if (len > 1) {
    const Tensor path = noise_move_path(spec.noise, len - 1);
    for (std::size_t t = 0; t < len; ++t) {
      last = sign * spec.scale * (path[t] / spec.noise.s0 - 1.0);
      attacked[t] += last;
    }
  }
  return {x, std::move(attacked), spec, last};
}

/// Shift by k samples with edge replication. Forward delays the signal.
inline Tensor shift_signal(const Tensor& x, std::size_t k, LagDirection direction) {
  const std::size_t len = x.size();
  Tensor out = x;
  if (k == 0) return out;
  for (std::size_t t = 0; t < len; ++t) {
    if (direction == LagDirection::forward) {
      out[t] = t >= k ? x[t - k] : x[0];
    } else {
      out[t] = t + k < len ? x[t + k] : x[len - 1];
    }
  }
  return out;
}

inline std::size_t lag_steps(double magnitude, double max_fraction, std::size_t len) {
  const double raw = std::round(std::abs(magnitude) * max_fraction * static_cast<double>(len));
  return std::min(static_cast<std::size_t>(raw), len / 2);
}

inline AttackedSample lag_attack(const Tensor& x, const LagAttack& spec) {
  const std::size_t k = lag_steps(sample_magnitude(spec.noise, x.size()), spec.max_fraction, x.size());
  return {x, shift_signal(x, k, spec.direction), spec, static_cast<double>(k)};
}

/// Apply a manual attack with its noise seed replaced by `seed`.
inline AttackedSample apply_manual_attack(const Tensor& x, AttackSpec spec, std::uint64_t seed) {
  struct Visitor {
    const Tensor& x;
    std::uint64_t seed;
    AttackedSample operator()(OffsetAttack s) const {
      s.noise.seed = seed;
      return offset_attack(x, s);
    }
    AttackedSample operator()(DriftAttack s) const {
      s.noise.seed = seed;
      return drift_attack(x, s);
    }
    AttackedSample operator()(LagAttack s) const {
      s.noise.seed = seed;
      return lag_attack(x, s);
    }
    AttackedSample operator()(const FgsmAttack&) const {
      throw UsageError("fgsm needs a model; use fgsm_attack");
    }
  };
  AttackedSample s = std::visit(Visitor{x, seed}, spec);
  s.sub_seed = seed;
  return s;
}

// ---------------------------------------------------------------------------
// FGSM

inline Tensor loss_input_gradient(const CapsNetModel& m, const Tensor& x, std::size_t label) {
  return capsnet_backward(m, capsnet_forward(m, x, label).cache, label).input;
}

inline Tensor loss_input_gradient(const CnnModel& m, const Tensor& x, std::size_t label) {
  return cnn_backward(m, cnn_forward(m, x), label).input;
}

inline double model_loss(const CapsNetModel& m, const Tensor& x, std::size_t label) {
  return capsnet_loss(m, x, label);
}

inline double model_loss(const CnnModel& m, const Tensor& x, std::size_t label) { return cnn_loss(m, x, label); }

/// x + alpha * sign(grad), sign(0) = 0.
inline Tensor fgsm_perturb(const Tensor& x, const Tensor& grad, double alpha) {
  if (!grad.all_finite()) throw NumericError("fgsm: non-finite input gradient");
  if (grad.size() != x.size()) throw ShapeError("fgsm: gradient length does not match input");
  Tensor out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double g = grad[i];
    out[i] += g > 0.0 ? alpha : (g < 0.0 ? -alpha : 0.0);
  }
  return out;
}

template <class Model>
AttackedSample fgsm_attack(const Model& model, const Tensor& x, std::size_t label, double alpha) {
  validate_spec(FgsmAttack{alpha});
  const Tensor signal = x.reshaped({x.size()});
  AttackedSample s{signal, fgsm_perturb(signal, loss_input_gradient(model, signal, label), alpha), FgsmAttack{alpha},
                   alpha};
  s.label = label;
  return s;
}

// ---------------------------------------------------------------------------
// Attack sets

/// Deterministic per-sample seed from (seed, index) via std::seed_seq.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

/// n source indices: without replacement while n <= size, with replacement beyond.
inline std::vector<std::size_t> draw_indices(std::size_t dataset_size, std::size_t n, std::uint64_t seed) {
  if (dataset_size == 0) throw DataError("attack set: empty dataset");
  std::mt19937_64 rng(derive_seed(seed, ~std::uint64_t{0}));
  std::vector<std::size_t> idx;
  if (n <= dataset_size) {
    idx.resize(dataset_size);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(n);
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, dataset_size - 1);
    for (std::size_t k = 0; k < n; ++k) idx.push_back(pick(rng));
  }
  return idx;
}

inline std::vector<AttackedSample> generate_attack_set(const Dataset& ds, const AttackSpec& spec, std::size_t n,
                                                       std::uint64_t seed) {
  validate_spec(spec);
  if (ds.beats.empty()) throw DataError("attack set: empty dataset");
  std::vector<AttackedSample> out;
  out.reserve(n);
  const auto idx = draw_indices(ds.size(), n, seed);
  for (std::size_t k = 0; k < n; ++k) {
    const Beat& beat = ds.beats[idx[k]];
    AttackedSample s = apply_manual_attack(beat.signal, spec, derive_seed(seed, k));
    s.label = beat.label;
    s.source_index = idx[k];
    out.push_back(std::move(s));
  }
  return out;
}

/// FGSM counterpart of generate_attack_set: same sampling, model-specific perturbation.
template <class Model>
std::vector<AttackedSample> generate_fgsm_set(const Dataset& ds, const Model& model, double alpha, std::size_t n,
                                              std::uint64_t seed) {
  if (ds.beats.empty()) throw DataError("attack set: empty dataset");
  std::vector<AttackedSample> out;
  out.reserve(n);
  const auto idx = draw_indices(ds.size(), n, seed);
  for (std::size_t k = 0; k < n; ++k) {
    const Beat& beat = ds.beats[idx[k]];
    AttackedSample s = fgsm_attack(model, beat.signal, beat.label, alpha);
    s.source_index = idx[k];
    s.sub_seed = derive_seed(seed, k);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace capsnoise
