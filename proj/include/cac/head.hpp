// SPDX-License-Identifier: Apache-2.0
//
// Segmentation head: H re-weighting modules applied to the same features, a
// global pooling branch, channel concatenation and a 1x1 classifier.

#pragma once

#include <cstddef>
#include <string_view>
#include <variant>
#include <vector>

#include "cac/baselines.hpp"
#include "cac/cac_module.hpp"
#include "cac/rng.hpp"
#include "cac/tensor.hpp"

namespace cac {

enum class HeadKind { cac, fixed, gap, dwfc, se };

std::string_view to_string(HeadKind kind);
HeadKind head_kind_from_string(std::string_view name);

struct HeadConfig {
  HeadKind kind = HeadKind::cac;
  CaCConfig cac;  // channels, s, dilations, heads and padding apply to every kind
  std::size_t se_reduction = 4;
  std::size_t num_classes = 3;
  bool global_pool = true;
  // Feature extents the dwfc kind is built for.
  std::size_t feature_height = 0;
  std::size_t feature_width = 0;

  std::size_t classifier_inputs() const { return (cac.heads + (global_pool ? 1 : 0)) * cac.channels; }
  void validate() const;
};

using ModuleParams = std::variant<CaCParams, FixedKernelParams, GapKernelParams, DwFcKernelParams, SEParams>;
using ModuleCache = std::variant<CaCCache, KernelReweightCache, GapKernelCache, KernelReweightCache, SECache>;

ModuleParams init_module(const HeadConfig& cfg, CounterRng& rng);
std::size_t module_parameter_count(const ModuleParams& params);
std::vector<ParamRef> module_parameters(ModuleParams& params, std::string_view prefix);

/// Re-weighted features of one module, (n, c, h, w).
Tensor module_forward(const ModuleParams& params, const HeadConfig& cfg, const Tensor& x, ModuleCache* cache = nullptr);
Tensor module_backward(const ModuleCache& cache, ModuleParams& params, const HeadConfig& cfg, const Tensor& grad_out);
/// The weighting factors the module would multiply x by.
Tensor module_weight_map(const ModuleParams& params, const HeadConfig& cfg, const Tensor& x);

struct SegHead {
  std::vector<ModuleParams> modules;
  Tensor classifier_weight;  // (num_classes, classifier_inputs)
  Tensor classifier_bias;    // (num_classes)

  static SegHead init(const HeadConfig& cfg, CounterRng& rng);
  std::size_t reweight_parameter_count() const;
  std::size_t classifier_parameter_count() const { return classifier_weight.size() + classifier_bias.size(); }
  std::vector<ParamRef> parameters(std::string_view prefix);
};

struct HeadCache {
  Tensor input;
  std::vector<ModuleCache> modules;
  Tensor features;  // concatenated classifier input
};

/// Logits (n, num_classes, h, w) at feature resolution.
Tensor head_forward(const Tensor& x, const SegHead& head, const HeadConfig& cfg, HeadCache* cache = nullptr);
/// Accumulates parameter gradients; returns d loss / d x.
Tensor head_backward(const HeadCache& cache, SegHead& head, const HeadConfig& cfg, const Tensor& grad_logits);

}  // namespace cac
