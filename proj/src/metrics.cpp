// SPDX-License-Identifier: Apache-2.0
#include "cac/metrics.hpp"

#include <numeric>
#include <string>

#include "cac/errors.hpp"

namespace cac {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : k_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes == 0) throw ConfigError("confusion matrix needs at least one class");
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

void ConfusionMatrix::add(std::size_t truth, std::size_t pred, std::uint64_t n) {
  if (truth >= k_ || pred >= k_) {
    throw DataError("confusion matrix: class pair (" + std::to_string(truth) + ", " + std::to_string(pred) +
                    ") out of range for " + std::to_string(k_) + " classes");
  }
  counts_[truth * k_ + pred] += n;
}

void ConfusionMatrix::accumulate(const LabelMap& predictions, const LabelMap& labels,
                                 std::optional<std::int32_t> ignore_index) {
  if (predictions.values.size() != labels.values.size()) {
    throw DimensionError("confusion matrix: prediction and label maps differ in size");
  }
  // Validate first so a bad pixel leaves the matrix untouched.
  for (std::size_t i = 0; i < labels.values.size(); ++i) {
    const auto t = labels.values[i], p = predictions.values[i];
    if (ignore_index && t == *ignore_index) continue;
    const auto k = static_cast<std::int32_t>(k_);
    if (t < 0 || t >= k || p < 0 || p >= k) {
      throw DataError("confusion matrix: class out of range at pixel " + std::to_string(i) + " (truth " +
                      std::to_string(t) + ", prediction " + std::to_string(p) + ")");
    }
  }
  for (std::size_t i = 0; i < labels.values.size(); ++i) {
    const auto t = labels.values[i];
    if (ignore_index && t == *ignore_index) continue;
    counts_[static_cast<std::size_t>(t) * k_ + static_cast<std::size_t>(predictions.values[i])] += 1;
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw DimensionError("confusion matrix: merging different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

double pix_acc(const ConfusionMatrix& conf) {
  const auto total = conf.total();
  if (total == 0) throw DataError("pixAcc undefined for an empty confusion matrix");
  std::uint64_t diag = 0;
  for (std::size_t k = 0; k < conf.num_classes(); ++k) diag += conf.count(k, k);
  return static_cast<double>(diag) / static_cast<double>(total);
}

std::optional<double> class_iou(const ConfusionMatrix& conf, std::size_t k) {
  std::uint64_t row = 0, col = 0;
  for (std::size_t j = 0; j < conf.num_classes(); ++j) {
    row += conf.count(k, j);
    col += conf.count(j, k);
  }
  const std::uint64_t uni = row + col - conf.count(k, k);
  if (uni == 0) return std::nullopt;
  return static_cast<double>(conf.count(k, k)) / static_cast<double>(uni);
}

double mean_iou(const ConfusionMatrix& conf) {
  if (conf.total() == 0) throw DataError("mIoU undefined for an empty confusion matrix");
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < conf.num_classes(); ++k) {
    if (auto iou = class_iou(conf, k)) {
      sum += *iou;
      ++present;
    }
  }
  return sum / static_cast<double>(present);
}

}  // namespace cac
