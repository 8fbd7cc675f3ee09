#pragma once

#include <cstddef>

#include "stun/moe_model.hpp"
#include "stun/rng.hpp"

namespace stun {

struct SyntheticSpec {
  std::size_t layers = 2;
  std::size_t experts = 8;
  std::size_t model_dim = 16;
  std::size_t hidden_dim = 32;
  std::size_t top_k = 2;
  std::size_t clusters_per_layer = 4;
  // Relative noise: each entry gets N(0, (noise_sigma * rms(prototype))^2),
  // so the noise norm is about noise_sigma times the prototype norm.
  double noise_sigma = 0.0;
  // Router entries ~ N(0, (router_scale / sqrt(model_dim))^2).
  double router_scale = 2.0;
  Activation activation = Activation::relu;
  ForwardFlags flags;
};

// Draws clusters_per_layer prototype experts and router rows per layer and
// derives each expert from a prototype plus noise. Cluster membership is a
// random balanced assignment recorded in meta.planted. All stored values are
// float32-representable.
MoeModel generate_synthetic(const SyntheticSpec& shape, SeededRng& rng);

// i.i.d. N(0, 1) tokens.
CalibrationSet generate_calibration(std::size_t model_dim, std::size_t count,
                                    std::size_t seq_len, SeededRng& rng);

}  // namespace stun
