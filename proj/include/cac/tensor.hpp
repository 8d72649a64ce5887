// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor of doubles with an optional gradient slot.
// 4-D tensors follow the (batch, channel, height, width) convention.

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cac {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }

  // 4-D accessors (n, c, y, x).
  double& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  double at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  // 2-D accessors (row, col).
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  /// Same data viewed under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  bool has_grad() const { return !grad_.empty(); }
  /// Allocates a zeroed gradient buffer if none exists.
  std::span<double> grad();
  std::span<const double> grad() const { return grad_; }
  void zero_grad();
  void drop_grad() { grad_.clear(); }
  /// grad += delta, allocating on first use.
  void accumulate_grad(const Tensor& delta);

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

/// A learnable tensor exposed to optimizers and checkpoints under a stable name.
struct ParamRef {
  std::string name;
  Tensor* tensor;
};

/// Throws DimensionError when the shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);
/// Throws DimensionError unless t has the given rank.
void require_rank(const Tensor& t, std::size_t rank, const char* what);

/// Max |a - b| over all elements; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);
/// Max |a - b| / max(1e-300, max|b|): scale-relative difference.
double max_rel_diff(const Tensor& a, const Tensor& b);

}  // namespace cac
