#pragma once

// Synthetic model families shared by the unit and acceptance suites.

#include <cstdint>

#include "stun/oracle.hpp"
#include "stun/synthetic.hpp"

namespace stun::testing {

// l=2, n=6, d=32, top_k=2, two planted clusters, relative noise 0.05.
inline MoeModel oracle_family(std::uint64_t seed, CalibrationSet* calib) {
  SeededRng rng(seed);
  SyntheticSpec sp;
  sp.layers = 2;
  sp.experts = 6;
  sp.model_dim = 32;
  sp.hidden_dim = 64;
  sp.top_k = 2;
  sp.clusters_per_layer = 2;
  sp.noise_sigma = 0.05;
  MoeModel m = generate_synthetic(sp, rng);
  if (calib) *calib = generate_calibration(sp.model_dim, 16, 8, rng);
  return m;
}

// Exact duplicates: n=8 in 4 planted clusters, top-1 routing, renormalized.
inline MoeModel duplicate_family(std::uint64_t seed, CalibrationSet* calib) {
  SeededRng rng(seed);
  SyntheticSpec sp;
  sp.layers = 2;
  sp.experts = 8;
  sp.model_dim = 16;
  sp.hidden_dim = 32;
  sp.top_k = 1;
  sp.clusters_per_layer = 4;
  sp.flags.renormalize = true;
  MoeModel m = generate_synthetic(sp, rng);
  if (calib) *calib = generate_calibration(sp.model_dim, 8, 8, rng);
  return m;
}

// Planted redundancy: n=8 in 6 clusters (two near-duplicate pairs per layer),
// so removing 2 experts per layer takes out exactly the redundant mass.
inline Trial redundancy_trial(std::uint64_t seed) {
  SeededRng rng(seed);
  SyntheticSpec sp;
  sp.layers = 2;
  sp.experts = 8;
  sp.model_dim = 32;
  sp.hidden_dim = 64;
  sp.top_k = 2;
  sp.clusters_per_layer = 6;
  sp.noise_sigma = 0.05;
  sp.flags.renormalize = true;
  Trial t;
  t.model = generate_synthetic(sp, rng);
  t.calibration = generate_calibration(sp.model_dim, 16, 8, rng);
  t.heldout = generate_calibration(sp.model_dim, 16, 8, rng);
  return t;
}

inline constexpr double kRedundantMass = 2.0 / 8.0;

}  // namespace stun::testing
