// SPDX-License-Identifier: Apache-2.0
//
// Binary file formats, all little-endian.
//
// Dataset ("CACD"):
//   magic "CACD" | u16 version | u32 count | u32 height | u32 width | u32 classes
//   per sample: height*width*3 f64 image values (channel-major), then
//               height*width u16 labels (row-major)
//
// Parameter checkpoint ("CACP"):
//   magic "CACP" | u16 version
//   repeated until end of file:
//     u16 name length | name bytes | u8 rank | u32 extent * rank | f64 values

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cac/data.hpp"
#include "cac/tensor.hpp"

namespace cac {

inline constexpr std::uint16_t kDatasetFormatVersion = 1;
inline constexpr std::uint16_t kCheckpointFormatVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 4 + 2 + 4 * 4;

struct DatasetFile {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 0;
  std::vector<SegSample> samples;
};

std::vector<std::uint8_t> encode_dataset(const DatasetFile& data);
DatasetFile decode_dataset(std::span<const std::uint8_t> bytes);

void write_dataset(const std::filesystem::path& path, const DatasetFile& data);
DatasetFile read_dataset(const std::filesystem::path& path);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, std::span<const ParamRef> params);
/// Loads values into `params` by name; every parameter must be present with
/// a matching shape.
void read_checkpoint(const std::filesystem::path& path, std::span<const ParamRef> params);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace cac
