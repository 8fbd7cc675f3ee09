#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "stun/error.hpp"
#include "stun/rng.hpp"
#include "stun/tensor.hpp"

using namespace stun;

namespace {

Tensor2 random_matrix(SeededRng& rng, std::size_t r, std::size_t c) {
  std::vector<double> v(r * c);
  for (double& x : v) x = rng.normal();
  return Tensor2(r, c, v);
}

}  // namespace

TEST(Tensor, MatmulMatchesNaiveTripleLoop) {
  SeededRng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.index(9), k = 1 + rng.index(9), m = 1 + rng.index(9);
    const Tensor2 a = random_matrix(rng, n, k), b = random_matrix(rng, k, m);
    const Tensor2 c = matmul(a, b);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        long double acc = 0;
        for (std::size_t t = 0; t < k; ++t) acc += static_cast<long double>(a(i, t)) * b(t, j);
        EXPECT_NEAR(c(i, j), static_cast<double>(acc), 1e-12);
      }
    }
  }
}

TEST(Tensor, MatvecAgreesWithMatmul) {
  SeededRng rng(2);
  const Tensor2 a = random_matrix(rng, 5, 7);
  const Tensor2 x = random_matrix(rng, 7, 1);
  const Vector y = matvec(a, x.values());
  const Tensor2 c = matmul(a, x);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(y[i], c(i, 0));
}

TEST(Tensor, ShapeMismatchesThrow) {
  EXPECT_THROW(matmul(Tensor2(2, 3), Tensor2(2, 3)), ShapeError);
  EXPECT_THROW(matvec(Tensor2(2, 3), Vector(2)), ShapeError);
  EXPECT_THROW(subtract(Tensor2(2, 3), Tensor2(3, 2)), ShapeError);
  EXPECT_THROW(Tensor2(2, 2, {1.0, 2.0, 3.0}), ShapeError);
  EXPECT_THROW(l2_distance(Vector(2), Vector(3)), ShapeError);
}

TEST(Tensor, RejectsNonFiniteValues) {
  EXPECT_THROW(Tensor2(1, 2, {1.0, std::numeric_limits<double>::quiet_NaN()}), ArgumentError);
  EXPECT_THROW(Tensor2(1, 1, {std::numeric_limits<double>::infinity()}), ArgumentError);
}

TEST(Tensor, SoftmaxMatchesLongDoubleReference) {
  SeededRng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Vector v(1 + rng.index(12));
    for (double& x : v) x = rng.normal(0, 5);
    const Vector p = softmax(v);
    long double z = 0;
    for (double x : v) z += std::exp(static_cast<long double>(x));
    double sum = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      EXPECT_NEAR(p[i], static_cast<double>(std::exp(static_cast<long double>(v[i])) / z), 1e-15);
      sum += p[i];
    }
    EXPECT_NEAR(sum, 1.0, 1e-15);
  }
}

TEST(Tensor, SoftmaxIsStableForHugeLogits) {
  const Vector p = softmax(Vector{1000.0, 1000.0, -1000.0});
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
  EXPECT_EQ(p[2], 0.0);
  EXPECT_THROW(softmax(Vector{}), ShapeError);
}

TEST(Tensor, TopkBreaksTiesByLowerIndex) {
  EXPECT_EQ(topk(Vector{0.1, 0.5, 0.5, 0.2}, 2), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(topk(Vector{0.3, 0.3, 0.3}, 2), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(topk(Vector{0.1, 0.9, 0.4}, 3), (std::vector<std::size_t>{1, 2, 0}));
  EXPECT_THROW(topk(Vector{1.0}, 0), ArgumentError);
  EXPECT_THROW(topk(Vector{1.0}, 2), ArgumentError);
}

TEST(Tensor, NormsMatchLongDoubleReference) {
  SeededRng rng(4);
  const Tensor2 a = random_matrix(rng, 13, 17);
  long double acc = 0;
  for (double x : a.values()) acc += static_cast<long double>(x) * x;
  EXPECT_NEAR(frobenius_norm(a), static_cast<double>(std::sqrt(acc)), 1e-12);
  EXPECT_DOUBLE_EQ(l2_norm(Vector{3.0, 4.0}), 5.0);
  EXPECT_DOUBLE_EQ(l2_distance(Vector{1.0, 1.0}, Vector{4.0, 5.0}), 5.0);
}

TEST(Tensor, RoundToFloatIsIdempotent) {
  SeededRng rng(5);
  Tensor2 a = random_matrix(rng, 4, 4);
  round_to_float(a);
  for (double x : a.values()) EXPECT_EQ(x, static_cast<double>(static_cast<float>(x)));
  Tensor2 b = a;
  round_to_float(b);
  EXPECT_EQ(a, b);
}

TEST(Tensor, IdentityAndSubtract) {
  const Tensor2 i = Tensor2::identity(3);
  SeededRng rng(6);
  const Tensor2 a = random_matrix(rng, 3, 3);
  EXPECT_EQ(matmul(a, i), a);
  EXPECT_EQ(frobenius_norm(subtract(a, a)), 0.0);
}
