#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace stun {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles. Storage is always rows*cols long.
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols);
  // Throws ShapeError if data.size() != rows*cols, ArgumentError on
  // non-finite entries.
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor2 identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  friend bool operator==(const Tensor2&, const Tensor2&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Boolean mask over a matrix; 1 marks a pruned (zeroed) entry.
struct BitMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bits;

  BitMask() = default;
  BitMask(std::size_t r, std::size_t c) : rows(r), cols(c), bits(r * c, 0) {}

  std::size_t pruned_count() const noexcept;
  friend bool operator==(const BitMask&, const BitMask&) = default;
};

// Inner dimension is summed in ascending order so results are reproducible.
Tensor2 matmul(const Tensor2& a, const Tensor2& b);
Vector matvec(const Tensor2& a, std::span<const double> x);

Tensor2 subtract(const Tensor2& a, const Tensor2& b);

// Max-subtracted softmax. Throws ShapeError on empty input.
Vector softmax(std::span<const double> v);

// Indices of the k largest entries, largest first; equal values keep the
// lower index first. Throws ArgumentError unless 1 <= k <= v.size().
std::vector<std::size_t> topk(std::span<const double> v, std::size_t k);

double frobenius_norm(const Tensor2& t);
double l2_norm(std::span<const double> v);
double l2_distance(std::span<const double> a, std::span<const double> b);

// Rounds every entry through float32; used wherever values must survive
// a trip through the on-disk format unchanged.
void round_to_float(Tensor2& t);

}  // namespace stun
