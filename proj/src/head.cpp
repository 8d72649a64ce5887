// SPDX-License-Identifier: Apache-2.0
#include "cac/head.hpp"

#include <string>

#include "cac/errors.hpp"
#include "cac/init.hpp"

namespace cac {

std::string_view to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::cac:
      return "cac";
    case HeadKind::fixed:
      return "fixed";
    case HeadKind::gap:
      return "gap";
    case HeadKind::dwfc:
      return "dwfc";
    case HeadKind::se:
      return "se";
  }
  return "?";
}

HeadKind head_kind_from_string(std::string_view name) {
  if (name == "cac") return HeadKind::cac;
  if (name == "fixed") return HeadKind::fixed;
  if (name == "gap") return HeadKind::gap;
  if (name == "dwfc") return HeadKind::dwfc;
  if (name == "se") return HeadKind::se;
  throw ConfigError("unknown head kind '" + std::string(name) + "' (expected cac, fixed, gap, dwfc or se)");
}

void HeadConfig::validate() const {
  cac.validate();
  std::string problems;
  auto fail = [&](const std::string& msg) { problems += (problems.empty() ? "" : "; ") + msg; };
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (kind == HeadKind::se && (se_reduction == 0 || cac.channels % se_reduction != 0)) {
    fail("se.reduction must divide channel count " + std::to_string(cac.channels));
  }
  if (kind == HeadKind::dwfc && (feature_height == 0 || feature_width == 0)) {
    fail("dwfc requires fixed feature extents");
  }
  if (!problems.empty()) throw ConfigError("invalid head configuration: " + problems);
}

ModuleParams init_module(const HeadConfig& cfg, CounterRng& rng) {
  const std::size_t c = cfg.cac.channels, s = cfg.cac.kernel_size;
  switch (cfg.kind) {
    case HeadKind::cac:
      return CaCParams::init(cfg.cac, rng);
    case HeadKind::fixed:
      return FixedKernelParams::init(c, s, rng);
    case HeadKind::gap:
      return GapKernelParams::init(c, s, rng);
    case HeadKind::dwfc:
      return DwFcKernelParams::init(c, s, cfg.feature_height, cfg.feature_width, rng);
    case HeadKind::se:
      return SEParams::init(c, cfg.se_reduction, rng);
  }
  throw ConfigError("unhandled head kind");
}

std::size_t module_parameter_count(const ModuleParams& params) {
  return std::visit([](const auto& p) { return p.parameter_count(); }, params);
}

std::vector<ParamRef> module_parameters(ModuleParams& params, std::string_view prefix) {
  return std::visit([&](auto& p) { return p.parameters(prefix); }, params);
}

Tensor module_forward(const ModuleParams& params, const HeadConfig& cfg, const Tensor& x, ModuleCache* cache) {
  const auto& dil = cfg.cac.dilations;
  const auto pad = cfg.cac.padding;
  switch (params.index()) {
    case 0: {
      CaCCache* c = cache ? &cache->emplace<0>() : nullptr;
      return cac_forward(x, std::get<0>(params), cfg.cac, c);
    }
    case 1: {
      KernelReweightCache* c = cache ? &cache->emplace<1>() : nullptr;
      return fixed_kernel_forward(x, std::get<1>(params), dil, pad, c);
    }
    case 2: {
      GapKernelCache* c = cache ? &cache->emplace<2>() : nullptr;
      return gap_kernel_forward(x, std::get<2>(params), dil, pad, c);
    }
    case 3: {
      KernelReweightCache* c = cache ? &cache->emplace<3>() : nullptr;
      return dwfc_kernel_forward(x, std::get<3>(params), dil, pad, c);
    }
    default: {
      SECache* c = cache ? &cache->emplace<4>() : nullptr;
      return se_forward(x, std::get<4>(params), c);
    }
  }
}

Tensor module_backward(const ModuleCache& cache, ModuleParams& params, const HeadConfig& cfg, const Tensor& grad_out) {
  if (cache.index() != params.index()) throw ConfigError("module_backward: cache does not belong to these params");
  const auto& dil = cfg.cac.dilations;
  const auto pad = cfg.cac.padding;
  switch (params.index()) {
    case 0:
      return cac_backward(std::get<0>(cache), std::get<0>(params), cfg.cac, grad_out);
    case 1:
      return fixed_kernel_backward(std::get<1>(cache), std::get<1>(params), dil, pad, grad_out);
    case 2:
      return gap_kernel_backward(std::get<2>(cache), std::get<2>(params), dil, pad, grad_out);
    case 3:
      return dwfc_kernel_backward(std::get<3>(cache), std::get<3>(params), dil, pad, grad_out);
    default:
      return se_backward(std::get<4>(cache), std::get<4>(params), grad_out);
  }
}

Tensor module_weight_map(const ModuleParams& params, const HeadConfig& cfg, const Tensor& x) {
  const auto& dil = cfg.cac.dilations;
  const auto pad = cfg.cac.padding;
  switch (params.index()) {
    case 0: {
      auto kernels = predict_cac_kernels(x, std::get<0>(params), cfg.cac);
      return generate_weight_map(x, kernels.kernels, dil, pad);
    }
    case 1:
      return generate_weight_map(x, std::get<1>(params).kernels, dil, pad);
    case 2:
      return generate_weight_map(x, gap_predict_kernels(x, std::get<2>(params)), dil, pad);
    case 3:
      return generate_weight_map(x, dwfc_predict_kernels(x, std::get<3>(params)), dil, pad);
    default:
      return se_weight_map(x, std::get<4>(params));
  }
}

SegHead SegHead::init(const HeadConfig& cfg, CounterRng& rng) {
  cfg.validate();
  SegHead head;
  for (std::size_t i = 0; i < cfg.cac.heads; ++i) head.modules.push_back(init_module(cfg, rng));
  head.classifier_weight = fan_in_uniform({cfg.num_classes, cfg.classifier_inputs()}, cfg.classifier_inputs(), rng);
  head.classifier_bias = Tensor({cfg.num_classes});
  return head;
}

std::size_t SegHead::reweight_parameter_count() const {
  std::size_t n = 0;
  for (const auto& m : modules) n += module_parameter_count(m);
  return n;
}

std::vector<ParamRef> SegHead::parameters(std::string_view prefix) {
  const std::string p(prefix);
  std::vector<ParamRef> out;
  for (std::size_t i = 0; i < modules.size(); ++i) {
    auto part = module_parameters(modules[i], p + "module" + std::to_string(i) + ".");
    out.insert(out.end(), part.begin(), part.end());
  }
  out.push_back({p + "classifier_weight", &classifier_weight});
  out.push_back({p + "classifier_bias", &classifier_bias});
  return out;
}

Tensor head_forward(const Tensor& x, const SegHead& head, const HeadConfig& cfg, HeadCache* cache) {
  require_rank(x, 4, "head_forward input");
  if (head.modules.size() != cfg.cac.heads) {
    throw ConfigError("head_forward: " + std::to_string(head.modules.size()) + " modules for H=" +
                      std::to_string(cfg.cac.heads));
  }
  if (head.classifier_weight.rank() != 2 || head.classifier_weight.dim(1) != cfg.classifier_inputs() ||
      x.dim(1) != cfg.cac.channels) {
    throw ConfigError("head_forward: classifier " + shape_to_string(head.classifier_weight.shape()) +
                      " expects " + std::to_string(cfg.classifier_inputs()) + " inputs for features " +
                      shape_to_string(x.shape()));
  }
  std::vector<Tensor> parts;
  if (cache) {
    cache->input = x;
    cache->modules.assign(head.modules.size(), ModuleCache{});
  }
  for (std::size_t i = 0; i < head.modules.size(); ++i) {
    parts.push_back(module_forward(head.modules[i], cfg, x, cache ? &cache->modules[i] : nullptr));
  }
  if (cfg.global_pool) parts.push_back(global_pool_branch(x));
  Tensor features = ops::concat_channels(parts);
  Tensor logits = ops::conv2d_pointwise(features, head.classifier_weight, &head.classifier_bias);
  if (cache) cache->features = std::move(features);
  return logits;
}

Tensor head_backward(const HeadCache& cache, SegHead& head, const HeadConfig& cfg, const Tensor& grad_logits) {
  auto cls = ops::conv2d_pointwise_backward(cache.features, head.classifier_weight, true, grad_logits);
  head.classifier_weight.accumulate_grad(cls.dweight);
  head.classifier_bias.accumulate_grad(cls.dbias);
  const std::size_t parts = head.modules.size() + (cfg.global_pool ? 1 : 0);
  std::vector<std::size_t> sizes(parts, cfg.cac.channels);
  auto grads = ops::split_channels(cls.dx, sizes);
  Tensor dx(cache.input.shape());
  for (std::size_t i = 0; i < head.modules.size(); ++i) {
    ops::add_inplace(dx, module_backward(cache.modules[i], head.modules[i], cfg, grads[i]));
  }
  if (cfg.global_pool) ops::add_inplace(dx, global_pool_branch_backward(cache.input.shape(), grads.back()));
  return dx;
}

}  // namespace cac
