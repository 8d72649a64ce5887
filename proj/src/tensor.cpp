// SPDX-License-Identifier: Apache-2.0
#include "cac/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cac/errors.hpp"

namespace cac {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_numel(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_to_string(shape_));
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_to_string(shape_));
  }
  return shape_[axis];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

std::span<double> Tensor::grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
  return grad_;
}

void Tensor::zero_grad() { grad_.assign(data_.size(), 0.0); }

void Tensor::accumulate_grad(const Tensor& delta) {
  if (delta.shape() != shape_) {
    throw DimensionError("gradient shape " + shape_to_string(delta.shape()) + " does not match parameter shape " +
                         shape_to_string(shape_));
  }
  auto g = grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_to_string(t.shape()));
  }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_rel_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_rel_diff");
  double scale = 0.0;
  for (double v : b.data()) scale = std::max(scale, std::abs(v));
  return max_abs_diff(a, b) / std::max(scale, 1e-300);
}

}  // namespace cac
