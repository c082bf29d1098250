#pragma once

#include <random>

#include "capsnoise/capsnet.hpp"
#include "capsnoise/tensor.hpp"

namespace capsnoise::test_support {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

inline void randomize(Tensor& t, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data()) v = dist(rng);
}

/// L=16, N_p=4 capsule network small enough for finite differences.
inline CapsNetConfig tiny_capsnet_config(std::uint64_t seed) {
  CapsNetConfig cfg;
  cfg.trunk = {16, 3, 5, 4, 5, 2};
  cfg.primary_dim = 4;
  cfg.num_classes = 5;
  cfg.class_dim = 4;
  cfg.routing_iters = 3;
  cfg.decoder_hidden1 = 6;
  cfg.decoder_hidden2 = 8;
  cfg.recon_weight = 0.5;
  cfg.seed = seed;
  return cfg;
}

}  // namespace capsnoise::test_support
