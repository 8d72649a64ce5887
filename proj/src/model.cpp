// SPDX-License-Identifier: Apache-2.0
#include "cac/model.hpp"

#include <cmath>
#include <string>

#include "cac/errors.hpp"
#include "cac/init.hpp"
#include "cac/ops.hpp"

namespace cac {
namespace {

constexpr double kCalibrationEps = 1e-5;

void standardize_channels(Tensor& x, const Tensor& mean, const Tensor& scale) {
  const std::size_t nb = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t j = 0; j < c; ++j) {
      double* v = &x[(n * c + j) * hw];
      for (std::size_t p = 0; p < hw; ++p) v[p] = (v[p] - mean[j]) * scale[j];
    }
}

}  // namespace

std::string_view to_string(BackboneKind kind) { return kind == BackboneKind::identity ? "identity" : "shallow"; }

BackboneKind backbone_kind_from_string(std::string_view name) {
  if (name == "identity") return BackboneKind::identity;
  if (name == "shallow") return BackboneKind::shallow;
  throw ConfigError("unknown backbone '" + std::string(name) + "' (expected identity or shallow)");
}

void ModelConfig::finalize() {
  const std::size_t stride = backbone.effective_stride();
  head.cac.channels = backbone.output_channels(in_channels);
  head.feature_height = stride ? image_height / stride : 0;
  head.feature_width = stride ? image_width / stride : 0;
}

void ModelConfig::validate() const {
  std::string problems;
  auto fail = [&](const std::string& msg) { problems += (problems.empty() ? "" : "; ") + msg; };
  if (in_channels == 0) fail("in_channels must be positive");
  if (backbone.kind == BackboneKind::shallow) {
    if (backbone.channels == 0) fail("backbone.channels must be positive");
    if (backbone.depth == 0) fail("backbone.depth must be >= 1");
    if (backbone.stride == 0) fail("backbone.stride must be >= 1");
    else if (image_height % backbone.stride || image_width % backbone.stride) {
      fail("image extents must be divisible by backbone.stride");
    }
  }
  if (head.cac.channels != backbone.output_channels(in_channels)) {
    fail("head channels " + std::to_string(head.cac.channels) + " differ from backbone output channels");
  }
  if (head.kind == HeadKind::dwfc && (head.feature_height != image_height / backbone.effective_stride() ||
                                      head.feature_width != image_width / backbone.effective_stride())) {
    fail("dwfc extents must equal the feature map extents");
  }
  if (!problems.empty()) throw ConfigError("invalid model configuration: " + problems);
  head.validate();
}

SegmentationModel SegmentationModel::init(const ModelConfig& cfg, CounterRng& rng) {
  cfg.validate();
  SegmentationModel m;
  m.cfg_ = cfg;
  std::size_t prev = cfg.in_channels;
  if (cfg.backbone.kind == BackboneKind::shallow) {
    const std::size_t c = cfg.backbone.channels;
    for (std::size_t i = 0; i < cfg.backbone.depth; ++i) {
      BackboneBlock b;
      b.pointwise_weight = fan_in_uniform({c, prev}, prev, rng, 2.0);
      b.pointwise_bias = uniform_tensor({c}, 0.5, rng);
      b.spatial_kernel = fan_in_uniform({3, 3, c}, 9, rng);
      m.blocks_.push_back(std::move(b));
      if (i + 1 < cfg.backbone.depth) prev = c;
    }
    m.out_mean_ = Tensor({c});
    m.out_scale_ = Tensor({c}, 1.0);
  }
  m.head_ = SegHead::init(cfg.head, rng);
  m.aux_weight_ = fan_in_uniform({cfg.head.num_classes, prev}, prev, rng);
  m.aux_bias_ = Tensor({cfg.head.num_classes});
  return m;
}

BackboneOutput SegmentationModel::backbone_forward(const Tensor& images, BackboneCache* cache) const {
  require_rank(images, 4, "model input");
  if (images.dim(1) != cfg_.in_channels || images.dim(2) != cfg_.image_height || images.dim(3) != cfg_.image_width) {
    throw DimensionError("model input " + shape_to_string(images.shape()) + " does not match configured (" +
                         std::to_string(cfg_.in_channels) + ", " + std::to_string(cfg_.image_height) + ", " +
                         std::to_string(cfg_.image_width) + ")");
  }
  if (cfg_.backbone.kind == BackboneKind::identity) return {images, images};
  if (cache) {
    *cache = BackboneCache{};
    cache->image = images;
  }
  Tensor x = ops::avg_pool_downsample(images, cfg_.backbone.stride);
  Tensor penultimate;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& b = blocks_[i];
    if (i + 1 == blocks_.size()) penultimate = x;
    Tensor a = ops::conv2d_pointwise(x, b.pointwise_weight, &b.pointwise_bias);
    Tensor s = ops::conv2d_depthwise_dilated(a, b.spatial_kernel, 1, PaddingMode::zero);
    Tensor next = i + 1 < blocks_.size() ? ops::relu(s) : s;
    if (cache) {
      cache->block_inputs.push_back(std::move(x));
      cache->pointwise_out.push_back(std::move(a));
      cache->spatial_out.push_back(std::move(s));
    }
    x = std::move(next);
  }
  if (cfg_.backbone.standardize) standardize_channels(x, out_mean_, out_scale_);
  return {std::move(x), std::move(penultimate)};
}

void SegmentationModel::calibrate_backbone(const Tensor& images) {
  if (cfg_.backbone.kind == BackboneKind::identity || !cfg_.backbone.standardize) return;
  const bool on = cfg_.backbone.standardize;
  cfg_.backbone.standardize = false;
  const Tensor raw = backbone_forward(images).features;
  cfg_.backbone.standardize = on;
  const std::size_t nb = raw.dim(0), c = raw.dim(1), hw = raw.dim(2) * raw.dim(3);
  const double count = static_cast<double>(nb * hw);
  for (std::size_t j = 0; j < c; ++j) {
    double mean = 0.0;
    for (std::size_t n = 0; n < nb; ++n)
      for (std::size_t p = 0; p < hw; ++p) mean += raw[(n * c + j) * hw + p];
    mean /= count;
    double var = 0.0;
    for (std::size_t n = 0; n < nb; ++n)
      for (std::size_t p = 0; p < hw; ++p) {
        const double d = raw[(n * c + j) * hw + p] - mean;
        var += d * d;
      }
    var /= count;
    out_mean_[j] = mean;
    out_scale_[j] = 1.0 / std::sqrt(var + kCalibrationEps);
  }
}

ModelOutput SegmentationModel::forward_features(const BackboneOutput& features, ModelCache* cache) const {
  const std::size_t stride = cfg_.backbone.effective_stride();
  Tensor logits = head_forward(features.features, head_, cfg_.head, cache ? &cache->head : nullptr);
  Tensor aux = ops::conv2d_pointwise(features.penultimate, aux_weight_, &aux_bias_);
  if (cache) cache->features = features;
  return {ops::bilinear_upsample(logits, stride), ops::bilinear_upsample(aux, stride)};
}

ModelOutput SegmentationModel::forward(const Tensor& images, ModelCache* cache) const {
  BackboneOutput f = backbone_forward(images, cache ? &cache->backbone : nullptr);
  return forward_features(f, cache);
}

void SegmentationModel::backward(const ModelCache& cache, const Tensor& grad_logits, const Tensor& grad_aux_logits) {
  const std::size_t stride = cfg_.backbone.effective_stride();
  const Tensor& feats = cache.features.features;
  const Tensor& pen = cache.features.penultimate;
  Shape logit_shape{feats.dim(0), cfg_.head.num_classes, feats.dim(2), feats.dim(3)};
  Shape aux_shape{pen.dim(0), cfg_.head.num_classes, pen.dim(2), pen.dim(3)};

  const Tensor dlogits = ops::bilinear_upsample_backward(logit_shape, stride, grad_logits);
  Tensor dfeatures = head_backward(cache.head, head_, cfg_.head, dlogits);

  const Tensor daux = ops::bilinear_upsample_backward(aux_shape, stride, grad_aux_logits);
  auto aux = ops::conv2d_pointwise_backward(pen, aux_weight_, true, daux);
  aux_weight_.accumulate_grad(aux.dweight);
  aux_bias_.accumulate_grad(aux.dbias);

  if (cfg_.backbone.kind == BackboneKind::identity || cfg_.backbone.freeze) return;

  // Walk the blocks backwards; the aux gradient enters at the last block's input.
  const auto& bc = cache.backbone;
  Tensor grad = std::move(dfeatures);
  if (cfg_.backbone.standardize) {
    const std::size_t nb = grad.dim(0), c = grad.dim(1), hw = grad.dim(2) * grad.dim(3);
    for (std::size_t n = 0; n < nb; ++n)
      for (std::size_t j = 0; j < c; ++j)
        for (std::size_t p = 0; p < hw; ++p) grad[(n * c + j) * hw + p] *= out_scale_[j];
  }
  for (std::size_t k = blocks_.size(); k-- > 0;) {
    auto& b = blocks_[k];
    if (k + 1 < blocks_.size()) grad = ops::relu_backward(bc.spatial_out[k], grad);
    auto sp = ops::conv2d_depthwise_dilated_backward(bc.pointwise_out[k], b.spatial_kernel, 1, PaddingMode::zero, grad);
    b.spatial_kernel.accumulate_grad(sp.dkernel);
    auto pw = ops::conv2d_pointwise_backward(bc.block_inputs[k], b.pointwise_weight, true, sp.dx);
    b.pointwise_weight.accumulate_grad(pw.dweight);
    b.pointwise_bias.accumulate_grad(pw.dbias);
    grad = std::move(pw.dx);
    if (k + 1 == blocks_.size()) ops::add_inplace(grad, aux.dx);
  }
}

std::vector<ParamRef> SegmentationModel::trainable_parameters() {
  std::vector<ParamRef> out;
  if (!cfg_.backbone.freeze) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const std::string p = "backbone.block" + std::to_string(i) + ".";
      out.push_back({p + "pointwise_weight", &blocks_[i].pointwise_weight});
      out.push_back({p + "pointwise_bias", &blocks_[i].pointwise_bias});
      out.push_back({p + "spatial_kernel", &blocks_[i].spatial_kernel});
    }
  }
  auto head = head_.parameters("head.");
  out.insert(out.end(), head.begin(), head.end());
  out.push_back({"aux.weight", &aux_weight_});
  out.push_back({"aux.bias", &aux_bias_});
  return out;
}

std::vector<ParamRef> SegmentationModel::all_parameters() {
  const bool frozen = cfg_.backbone.freeze;
  cfg_.backbone.freeze = false;
  auto out = trainable_parameters();
  cfg_.backbone.freeze = frozen;
  if (!blocks_.empty()) {
    out.push_back({"backbone.out_mean", &out_mean_});
    out.push_back({"backbone.out_scale", &out_scale_});
  }
  return out;
}

std::size_t SegmentationModel::backbone_parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) n += b.pointwise_weight.size() + b.pointwise_bias.size() + b.spatial_kernel.size();
  return n;
}

}  // namespace cac
