// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>

#include "cac/rng.hpp"
#include "cac/tensor.hpp"

namespace cac {

inline Tensor uniform_tensor(Shape shape, double bound, CounterRng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

/// Uniform init with variance gain / fan_in.
inline Tensor fan_in_uniform(Shape shape, std::size_t fan_in, CounterRng& rng, double gain = 1.0) {
  return uniform_tensor(std::move(shape), std::sqrt(3.0 * gain / static_cast<double>(fan_in)), rng);
}

}  // namespace cac
