// SPDX-License-Identifier: Apache-2.0
#include "cac/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cac/errors.hpp"

namespace cac {
namespace {

double evaluate(const ScalarObjective& objective, std::span<const double> p) {
  const double v = objective(p, {});
  if (!std::isfinite(v)) throw NumericError("grad_check: objective returned non-finite value " + std::to_string(v));
  return v;
}

}  // namespace

GradCheckResult grad_check(const ScalarObjective& objective, std::span<const double> params, double eps,
                           double tolerance) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw ConfigError("grad_check: eps " + std::to_string(eps) + " outside [1e-7, 1e-3]");
  }
  std::vector<double> point(params.begin(), params.end());
  std::vector<double> analytic(point.size(), 0.0);
  const double base = objective(point, analytic);
  if (!std::isfinite(base)) throw NumericError("grad_check: objective returned non-finite value");

  GradCheckResult result;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + eps;
    const double up = evaluate(objective, point);
    point[i] = saved - eps;
    const double down = evaluate(objective, point);
    point[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    const double err = std::abs(analytic[i] - numeric) / denom;
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
    }
  }
  result.passed = result.max_rel_error < tolerance;
  return result;
}

}  // namespace cac
