// SPDX-License-Identifier: Apache-2.0
//
// Toy segmentation network: a shallow convolutional backbone, the
// re-weighting head, an auxiliary classifier on the penultimate backbone map,
// and bilinear upsampling of both logit maps back to image resolution.

#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "cac/head.hpp"
#include "cac/rng.hpp"
#include "cac/tensor.hpp"

namespace cac {

enum class BackboneKind { identity, shallow };

std::string_view to_string(BackboneKind kind);
BackboneKind backbone_kind_from_string(std::string_view name);

/// shallow: mean-pool by `stride`, then `depth` blocks of
/// (1x1 conv + bias, 3x3 depth-wise conv), ReLU between blocks. With
/// `standardize`, the output is shifted and scaled per channel by statistics
/// fixed once by SegmentationModel::calibrate_backbone.
/// identity: features are the image itself (stride 1).
struct BackboneConfig {
  BackboneKind kind = BackboneKind::shallow;
  std::size_t channels = 16;
  std::size_t depth = 2;
  std::size_t stride = 2;
  bool freeze = true;
  bool standardize = true;

  std::size_t output_channels(std::size_t in_channels) const {
    return kind == BackboneKind::identity ? in_channels : channels;
  }
  std::size_t effective_stride() const { return kind == BackboneKind::identity ? 1 : stride; }
  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

struct BackboneBlock {
  Tensor pointwise_weight;  // (c, c_prev)
  Tensor pointwise_bias;    // (c)
  Tensor spatial_kernel;    // (3, 3, c)
};

struct BackboneOutput {
  Tensor features;     // (n, c, h/stride, w/stride)
  Tensor penultimate;  // input of the last block
};

struct BackboneCache {
  Tensor image;
  std::vector<Tensor> block_inputs;   // input of each block
  std::vector<Tensor> pointwise_out;  // after the 1x1 conv
  std::vector<Tensor> spatial_out;    // after the depth-wise conv, before relu
};

struct ModelConfig {
  std::size_t in_channels = 3;
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  BackboneConfig backbone;
  HeadConfig head;  // head.cac.channels must equal the backbone output channels

  /// Fills derived head fields (channels, dwfc extents) from the backbone.
  void finalize();
  void validate() const;
};

struct ModelOutput {
  Tensor logits;      // (n, K, H, W) at image resolution
  Tensor aux_logits;  // (n, K, H, W)
};

struct ModelCache {
  BackboneCache backbone;
  BackboneOutput features;
  HeadCache head;
};

class SegmentationModel {
 public:
  static SegmentationModel init(const ModelConfig& cfg, CounterRng& rng);

  const ModelConfig& config() const { return cfg_; }
  SegHead& head() { return head_; }
  const SegHead& head() const { return head_; }
  std::vector<BackboneBlock>& backbone_blocks() { return blocks_; }

  /// Sets the output standardization to the per-channel mean and inverse
  /// standard deviation of the raw backbone output over `images`. No-op for
  /// the identity backbone or when standardization is off.
  void calibrate_backbone(const Tensor& images);

  BackboneOutput backbone_forward(const Tensor& images, BackboneCache* cache = nullptr) const;
  ModelOutput forward_features(const BackboneOutput& features, ModelCache* cache = nullptr) const;
  ModelOutput forward(const Tensor& images, ModelCache* cache = nullptr) const;

  /// Accumulates gradients of every trainable parameter. The backbone is
  /// skipped when frozen; `cache.backbone` may then be empty.
  void backward(const ModelCache& cache, const Tensor& grad_logits, const Tensor& grad_aux_logits);

  /// Trainable parameters (the backbone only when not frozen).
  std::vector<ParamRef> trainable_parameters();
  /// Every parameter, for checkpoints.
  std::vector<ParamRef> all_parameters();

  std::size_t backbone_parameter_count() const;
  std::size_t aux_parameter_count() const { return aux_weight_.size() + aux_bias_.size(); }

 private:
  ModelConfig cfg_;
  std::vector<BackboneBlock> blocks_;
  SegHead head_;
  Tensor out_mean_;    // (c), backbone output shift
  Tensor out_scale_;   // (c), backbone output scale
  Tensor aux_weight_;  // (K, penultimate channels)
  Tensor aux_bias_;    // (K)
};

}  // namespace cac
