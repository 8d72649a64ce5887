// SPDX-License-Identifier: Apache-2.0
//
// Seeded "context-XOR" segmentation task.
//
// Each image has three channels:
//   0  rectangular blobs of two texture types, value 0.25 (type 0) or 0.75
//      (type 1) plus uniform noise in [-texture_noise, texture_noise];
//      background pixels are exactly 0
//   1  a global cue g in {0, 1}, constant over the image
//   2  a horizontal ramp x / (w - 1)
//
// Blob pixel label = 1 + (type XOR g XOR side), side = (x < w/2 ? 0 : 1);
// background label = 0. With two classes there is no background: the image is
// tiled with type-0 texture before blobs are painted and the label drops the
// +1 offset. The same local texture therefore maps to different classes
// depending on the global cue and on position.
//
// Sample i is generated from its own counter stream keyed by (seed, i), so a
// dataset is a pure function of its spec and generation order is irrelevant.

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cac/ops.hpp"
#include "cac/tensor.hpp"

namespace cac {

struct DatasetSpec {
  std::uint64_t seed = 0;
  std::size_t count = 64;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t num_classes = 3;
  double texture_noise = 0.05;
  std::size_t blob_count_min = 3;
  std::size_t blob_count_max = 6;
  std::size_t blob_size_min = 6;
  std::size_t blob_size_max = 12;

  /// Throws GenerationError naming every violated constraint.
  void validate() const;
  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

inline constexpr std::size_t kImageChannels = 3;
inline constexpr double kTextureLevel[2] = {0.25, 0.75};

struct SegSample {
  Tensor image;     // (3, h, w), values in [0, 1]
  LabelMap labels;  // batch 1

  friend bool operator==(const SegSample&, const SegSample&) = default;
};

/// Samples [first, first + spec.count) of the stream family keyed by spec.seed.
std::vector<SegSample> generate_context_dataset(const DatasetSpec& spec, std::size_t first = 0);
SegSample generate_context_sample(const DatasetSpec& spec, std::size_t index);

/// Stacks sample images into (n, 3, h, w) and labels into one LabelMap.
Tensor batch_images(const std::vector<const SegSample*>& samples);
LabelMap batch_labels(const std::vector<const SegSample*>& samples);

}  // namespace cac
