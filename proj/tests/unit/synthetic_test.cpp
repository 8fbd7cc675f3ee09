#include <gtest/gtest.h>

#include <map>

#include "stun/synthetic.hpp"

using namespace stun;

namespace {

SyntheticSpec shape(double noise) {
  SyntheticSpec sp;
  sp.layers = 3;
  sp.experts = 9;
  sp.clusters_per_layer = 3;
  sp.noise_sigma = noise;
  return sp;
}

}  // namespace

TEST(Synthetic, ZeroNoiseMembersAreIdentical) {
  SeededRng rng(1);
  const MoeModel m = generate_synthetic(shape(0.0), rng);
  ASSERT_TRUE(m.meta.planted.has_value());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& labels = (*m.meta.planted)[l];
    for (std::size_t i = 0; i < 9; ++i) {
      for (std::size_t j = 0; j < 9; ++j) {
        if (labels[i] != labels[j]) continue;
        EXPECT_EQ(m.layers[l].experts[i], m.layers[l].experts[j]);
        for (std::size_t c = 0; c < m.model_dim; ++c) EXPECT_EQ(m.layers[l].router(i, c), m.layers[l].router(j, c));
      }
    }
  }
}

TEST(Synthetic, PlantedClustersAreBalanced) {
  SeededRng rng(2);
  const MoeModel m = generate_synthetic(shape(0.1), rng);
  for (const auto& labels : *m.meta.planted) {
    std::map<std::size_t, int> sizes;
    for (auto c : labels) ++sizes[c];
    ASSERT_EQ(sizes.size(), 3u);
    for (auto [c, n] : sizes) EXPECT_EQ(n, 3);
  }
}

TEST(Synthetic, ValuesAreFloatRepresentable) {
  SeededRng rng(3);
  const MoeModel m = generate_synthetic(shape(0.2), rng);
  for (const auto& l : m.layers) {
    for (double v : l.router.values()) EXPECT_EQ(v, static_cast<double>(static_cast<float>(v)));
    for (const auto& e : l.experts)
      for (double v : e.w_in.values()) EXPECT_EQ(v, static_cast<double>(static_cast<float>(v)));
  }
}

TEST(Synthetic, NoiseIsRelativeToPrototypeNorm) {
  SeededRng a(4), b(4);
  const MoeModel clean = generate_synthetic(shape(0.0), a);
  const MoeModel noisy = generate_synthetic(shape(0.05), b);
  // Same seed, same prototypes; the perturbation norm is ~5% of the expert.
  const auto& e0 = clean.layers[0].experts[0].w_in;
  const auto& e1 = noisy.layers[0].experts[0].w_in;
  const double rel = frobenius_norm(subtract(e1, e0)) / frobenius_norm(e0);
  EXPECT_NEAR(rel, 0.05, 0.01);
}

TEST(Synthetic, DeterministicBySeed) {
  SeededRng a(5), b(5);
  EXPECT_EQ(generate_synthetic(shape(0.1), a), generate_synthetic(shape(0.1), b));
  SeededRng c(5), d(5);
  const auto x = generate_calibration(8, 3, 4, c);
  const auto y = generate_calibration(8, 3, 4, d);
  ASSERT_EQ(x.count(), 3u);
  EXPECT_EQ(x.token_count(), 12u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(x.samples[i], y.samples[i]);
}
