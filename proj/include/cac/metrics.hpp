// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "cac/ops.hpp"

namespace cac {

/// K x K pixel counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);

  std::size_t num_classes() const { return k_; }
  std::uint64_t count(std::size_t truth, std::size_t pred) const { return counts_[truth * k_ + pred]; }
  std::uint64_t total() const;

  /// Throws DataError for classes outside [0, K) that are not ignored.
  void accumulate(const LabelMap& predictions, const LabelMap& labels,
                  std::optional<std::int32_t> ignore_index = std::nullopt);
  void add(std::size_t truth, std::size_t pred, std::uint64_t n = 1);
  void merge(const ConfusionMatrix& other);

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

/// trace / total. Throws DataError on an empty matrix.
double pix_acc(const ConfusionMatrix& conf);

/// IoU of class k, or nullopt when k is absent from both truth and prediction.
std::optional<double> class_iou(const ConfusionMatrix& conf, std::size_t k);

/// Mean IoU over classes present in truth or prediction. Throws DataError on
/// an empty matrix.
double mean_iou(const ConfusionMatrix& conf);

}  // namespace cac
