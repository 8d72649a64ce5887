// SPDX-License-Identifier: Apache-2.0
#include "cac/data.hpp"

#include <string>

#include "cac/errors.hpp"
#include "cac/rng.hpp"

namespace cac {

void DatasetSpec::validate() const {
  std::string problems;
  auto fail = [&](const std::string& msg) { problems += (problems.empty() ? "" : "; ") + msg; };
  if (height == 0 || width == 0) fail("data.height and data.width must be positive");
  if (num_classes != 2 && num_classes != 3) fail("data.num_classes must be 2 or 3");
  if (!(texture_noise >= 0.0 && texture_noise < 0.25)) {
    fail("data.texture_noise must lie in [0, 0.25) so texture levels stay separable");
  }
  if (blob_count_min > blob_count_max) fail("data.blob_count_min exceeds data.blob_count_max");
  if (blob_size_min == 0 || blob_size_min > blob_size_max) fail("data.blob_size range must satisfy 1 <= min <= max");
  if (blob_size_max > height || blob_size_max > width) {
    fail("blob size " + std::to_string(blob_size_max) + " larger than image " + std::to_string(height) + "x" +
         std::to_string(width));
  }
  if (!problems.empty()) throw GenerationError("invalid dataset spec: " + problems);
}

SegSample generate_context_sample(const DatasetSpec& spec, std::size_t index) {
  spec.validate();
  const std::size_t h = spec.height, w = spec.width;
  CounterRng rng(derive_key(spec.seed, index));

  const auto cue = static_cast<int>(rng.below(2));
  const bool with_background = spec.num_classes == 3;
  std::vector<int> texture(h * w, with_background ? -1 : 0);

  const auto blobs = static_cast<std::size_t>(
      rng.range(static_cast<std::int64_t>(spec.blob_count_min), static_cast<std::int64_t>(spec.blob_count_max)));
  for (std::size_t b = 0; b < blobs; ++b) {
    const auto type = static_cast<int>(rng.below(2));
    const auto bh = static_cast<std::size_t>(
        rng.range(static_cast<std::int64_t>(spec.blob_size_min), static_cast<std::int64_t>(spec.blob_size_max)));
    const auto bw = static_cast<std::size_t>(
        rng.range(static_cast<std::int64_t>(spec.blob_size_min), static_cast<std::int64_t>(spec.blob_size_max)));
    const auto y0 = static_cast<std::size_t>(rng.range(0, static_cast<std::int64_t>(h - bh)));
    const auto x0 = static_cast<std::size_t>(rng.range(0, static_cast<std::int64_t>(w - bw)));
    for (std::size_t y = y0; y < y0 + bh; ++y)
      for (std::size_t x = x0; x < x0 + bw; ++x) texture[y * w + x] = type;
  }

  SegSample s{Tensor({kImageChannels, h, w}), LabelMap(1, h, w)};
  const double ramp_scale = w > 1 ? 1.0 / static_cast<double>(w - 1) : 0.0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const int t = texture[y * w + x];
      const std::size_t p = y * w + x;
      if (t >= 0) {
        s.image[p] = kTextureLevel[t] + spec.texture_noise * (2.0 * rng.uniform() - 1.0);
        const int side = x < w / 2 ? 0 : 1;
        s.labels.values[p] = (t ^ cue ^ side) + (with_background ? 1 : 0);
      }
      s.image[h * w + p] = static_cast<double>(cue);
      s.image[2 * h * w + p] = static_cast<double>(x) * ramp_scale;
    }
  }
  return s;
}

std::vector<SegSample> generate_context_dataset(const DatasetSpec& spec, std::size_t first) {
  spec.validate();
  std::vector<SegSample> out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) out.push_back(generate_context_sample(spec, first + i));
  return out;
}

Tensor batch_images(const std::vector<const SegSample*>& samples) {
  std::vector<Tensor> images;
  images.reserve(samples.size());
  for (const auto* s : samples) images.push_back(s->image);
  return ops::stack(images);
}

LabelMap batch_labels(const std::vector<const SegSample*>& samples) {
  if (samples.empty()) return {};
  LabelMap out(samples.size(), samples.front()->labels.height, samples.front()->labels.width);
  const std::size_t per = out.height * out.width;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& l = samples[i]->labels;
    if (l.height != out.height || l.width != out.width) throw DimensionError("batch_labels: mismatched label maps");
    std::copy(l.values.begin(), l.values.end(), out.values.begin() + static_cast<long>(i * per));
  }
  return out;
}

}  // namespace cac
