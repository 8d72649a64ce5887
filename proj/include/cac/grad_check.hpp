// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>

namespace cac {

/// Evaluates a scalar objective at `params`. When `grad` is non-empty the
/// function must also write the analytic gradient into it.
using ScalarObjective = std::function<double(std::span<const double> params, std::span<double> grad)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool passed = false;
};

/// Central-difference check of the analytic gradient. Per coordinate the error
/// is |analytic - numeric| / max(1, |analytic|, |numeric|); the maximum over
/// coordinates is compared against `tolerance`.
///
/// Throws ConfigError if eps lies outside [1e-7, 1e-3] and NumericError if the
/// objective returns a non-finite value.
GradCheckResult grad_check(const ScalarObjective& objective, std::span<const double> params, double eps,
                           double tolerance);

}  // namespace cac
