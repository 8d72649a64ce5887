// SPDX-License-Identifier: Apache-2.0
//
// Self-verification suites run by `cac verify` and the acceptance binary.
//
//   oracles     optimized operators against the naive loops in oracles.hpp
//   grads       central finite differences against every backward pass
//   invariants  structural properties, parameter accounting and optimizer
//               contracts
//
// Each check reports one line: "PASS|FAIL name value tolerance".

#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace cac::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;      // measured error, count or statistic
  double tolerance = 0.0;  // the bound it was held to
};

struct Options {
  std::uint64_t seed = 20240611;
  std::size_t instances = 24;  // random instances per oracle / invariant check
  std::size_t grad_seeds = 5;  // random instances per gradient check
  /// Name of a gradient check (e.g. "grad.reweight") whose analytic gradient
  /// is deliberately corrupted, to exercise the failure path.
  std::string inject_gradient_fault;
};

std::vector<CheckResult> run_oracles(const Options& opts);
std::vector<CheckResult> run_grads(const Options& opts);
std::vector<CheckResult> run_invariants(const Options& opts);

/// suite: oracles | grads | invariants | all. Throws ConfigError otherwise.
std::vector<CheckResult> run_suite(std::string_view suite, const Options& opts);

std::string format_result(const CheckResult& r);
/// Writes one line per check; returns true when every check passed.
bool report(std::ostream& out, const std::vector<CheckResult>& results);

}  // namespace cac::verify
