#include "stun/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "stun/error.hpp"

namespace stun {

Tensor2::Tensor2(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " != " +
                     std::to_string(rows_) + "x" + std::to_string(cols_));
  }
  for (double v : data_) {
    if (!std::isfinite(v)) throw ArgumentError("tensor entries must be finite");
  }
}

Tensor2 Tensor2::identity(std::size_t n) {
  Tensor2 t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::size_t BitMask::pruned_count() const noexcept {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " by " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Tensor2 out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(p, j);
      out(i, j) = acc;
    }
  }
  return out;
}

Vector matvec(const Tensor2& a, std::span<const double> x) {
  if (a.cols() != x.size()) {
    throw ShapeError("matvec: " + std::to_string(a.cols()) + " columns vs input " +
                     std::to_string(x.size()));
  }
  Vector out(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    double acc = 0.0;
    for (std::size_t p = 0; p < r.size(); ++p) acc += r[p] * x[p];
    out[i] = acc;
  }
  return out;
}

Tensor2 subtract(const Tensor2& a, const Tensor2& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("subtract: shape mismatch");
  Tensor2 out(a.rows(), a.cols());
  auto o = out.values();
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] - bv[i];
  return out;
}

Vector softmax(std::span<const double> v) {
  if (v.empty()) throw ShapeError("softmax of an empty vector");
  const double peak = *std::max_element(v.begin(), v.end());
  Vector out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - peak);
    sum += out[i];
  }
  for (double& e : out) e /= sum;
  return out;
}

std::vector<std::size_t> topk(std::span<const double> v, std::size_t k) {
  if (k < 1 || k > v.size()) {
    throw ArgumentError("topk: k=" + std::to_string(k) + " outside [1, " +
                        std::to_string(v.size()) + "]");
  }
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (v[a] != v[b]) return v[a] > v[b];
                      return a < b;
                    });
  idx.resize(k);
  return idx;
}

double frobenius_norm(const Tensor2& t) { return l2_norm(t.values()); }

double l2_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("l2_distance: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

void round_to_float(Tensor2& t) {
  for (double& v : t.values()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace stun
