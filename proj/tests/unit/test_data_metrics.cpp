// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "cac/data.hpp"
#include "cac/errors.hpp"
#include "cac/metrics.hpp"
#include "cac/serialization.hpp"
#include "cac/training.hpp"

using namespace cac;

namespace {

DatasetSpec spec(std::size_t count, std::size_t classes = 3) {
  DatasetSpec s;
  s.seed = 77;
  s.count = count;
  s.num_classes = classes;
  return s;
}

LabelMap labels_of(std::vector<std::int32_t> v) {
  LabelMap m(1, 1, v.size());
  m.values = std::move(v);
  return m;
}

}  // namespace

TEST_CASE("generation is a pure function of the DatasetSpec") {
  const auto a = generate_context_dataset(spec(6));
  const auto b = generate_context_dataset(spec(6));
  CHECK(a == b);
  // Sample i does not depend on how many samples precede it in the call.
  const auto tail = generate_context_dataset(spec(2), 4);
  CHECK(tail[0] == a[4]);
  CHECK(tail[1] == a[5]);
  DatasetSpec other = spec(6);
  other.seed = 78;
  CHECK_FALSE(generate_context_dataset(other) == a);
}

TEST_CASE("every stored label agrees with the generative rule") {
  for (std::size_t classes : {2u, 3u}) {
    const DatasetSpec s = spec(24, classes);
    for (const auto& sample : generate_context_dataset(s)) {
      const std::size_t h = s.height, w = s.width;
      const double g = sample.image[h * w];
      CHECK((g == 0.0 || g == 1.0));
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double tex = sample.image[y * w + x];
          CHECK(sample.image[h * w + y * w + x] == g);
          CHECK(sample.image[2 * h * w + y * w + x] == doctest::Approx(static_cast<double>(x) / (w - 1)));
          const int label = sample.labels.at(0, y, x);
          if (classes == 3 && tex == 0.0) {
            CHECK(label == 0);
            continue;
          }
          const int type = tex > 0.5 ? 1 : 0;
          CHECK(std::abs(tex - kTextureLevel[type]) <= s.texture_noise);
          const int side = x < w / 2 ? 0 : 1;
          const int rule = type ^ static_cast<int>(g) ^ side;
          CHECK(label == (classes == 3 ? 1 + rule : rule));
        }
    }
  }
}

TEST_CASE("non-background classes are balanced over 256 samples") {
  const auto data = generate_context_dataset(spec(256));
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& s : data)
    for (auto v : s.labels.values) counts[v] += 1;
  const double fg = static_cast<double>(counts[1] + counts[2]);
  REQUIRE(fg > 0.0);
  for (int k : {1, 2}) {
    const double share = static_cast<double>(counts[k]) / fg;
    CHECK(share >= 0.30);
    CHECK(share <= 0.70);
  }
}

TEST_CASE("degenerate specs are generation errors") {
  DatasetSpec s = spec(1);
  s.blob_size_max = 40;
  CHECK_THROWS_AS(generate_context_dataset(s), GenerationError);
  s = spec(1);
  s.texture_noise = 0.3;
  CHECK_THROWS_AS(s.validate(), GenerationError);
}

TEST_CASE("confusion matrix accumulation") {
  ConfusionMatrix conf(2);
  conf.accumulate(labels_of({0, 1, 1, 1}), labels_of({0, 0, 1, 1}));
  CHECK(conf.count(0, 0) == 1);
  CHECK(conf.count(0, 1) == 1);
  CHECK(conf.count(1, 0) == 0);
  CHECK(conf.count(1, 1) == 2);

  ConfusionMatrix diag(3);
  diag.accumulate(labels_of({2, 0, 1, 2}), labels_of({2, 0, 1, 2}));
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t p = 0; p < 3; ++p)
      if (t != p) CHECK(diag.count(t, p) == 0);

  const ConfusionMatrix before = diag;
  diag.accumulate(LabelMap(0, 0, 0), LabelMap(0, 0, 0));
  CHECK(diag == before);

  CHECK_THROWS_AS(conf.accumulate(labels_of({0, 2}), labels_of({0, 1})), DataError);
  ConfusionMatrix ign(2);
  ign.accumulate(labels_of({0, 1}), labels_of({255, 1}), 255);
  CHECK(ign.total() == 1);
}

TEST_CASE("metrics of the [[3,1],[2,4]] matrix") {
  ConfusionMatrix conf(2);
  conf.add(0, 0, 3);
  conf.add(0, 1, 1);
  conf.add(1, 0, 2);
  conf.add(1, 1, 4);
  CHECK(pix_acc(conf) == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(*class_iou(conf, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(*class_iou(conf, 1) == doctest::Approx(4.0 / 7.0).epsilon(1e-15));
  // (1/2 + 4/7) / 2 evaluated by hand: 15/28.
  CHECK(mean_iou(conf) == doctest::Approx(0.5357142857142857).epsilon(1e-15));
}

TEST_CASE("metric edge cases") {
  ConfusionMatrix diag(3);
  diag.add(0, 0, 5);
  diag.add(2, 2, 7);
  CHECK(pix_acc(diag) == 1.0);
  CHECK(mean_iou(diag) == 1.0);
  CHECK_FALSE(class_iou(diag, 1).has_value());
  const Metrics m = metrics_from(diag);
  CHECK(m.pix_acc == 1.0);
  CHECK(m.mean_iou == 1.0);

  ConfusionMatrix wrong(2);
  wrong.add(0, 1, 3);
  wrong.add(1, 0, 2);
  CHECK(mean_iou(wrong) == 0.0);

  ConfusionMatrix empty(2);
  CHECK_THROWS_AS(pix_acc(empty), DataError);
  CHECK_THROWS_AS(mean_iou(empty), DataError);
}

TEST_CASE("dataset file: size arithmetic, round trip, empty dataset") {
  DatasetSpec s = spec(1);
  s.height = 8;
  s.width = 8;
  s.blob_size_min = 2;
  s.blob_size_max = 4;
  const DatasetFile file{8, 8, 3, generate_context_dataset(s)};
  const auto bytes = encode_dataset(file);
  // header 4+2+4*4, then 8*8*3 f64 image values and 8*8 u16 labels.
  CHECK(bytes.size() == 22 + 1536 + 128);
  const DatasetFile back = decode_dataset(bytes);
  CHECK(back.samples == file.samples);
  CHECK(encode_dataset(back) == bytes);

  const DatasetFile none{8, 8, 3, {}};
  const auto header = encode_dataset(none);
  CHECK(header.size() == kDatasetHeaderBytes);
  CHECK(decode_dataset(header).samples.empty());

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_dataset(bad), IoError);
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(decode_dataset(bad), IoError);
}

TEST_CASE("checkpoint round trip by name") {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6}), b({4}, {-1, 0.5, 1e-300, 7});
  std::vector<NamedTensor> tensors{{"head.a", a}, {"b", b}};
  const auto bytes = encode_checkpoint(tensors);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "CACP");
  const auto back = decode_checkpoint(bytes);
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "head.a");
  CHECK(back[0].tensor.shape() == a.shape());
  CHECK(max_abs_diff(back[1].tensor, b) == 0.0);
}
