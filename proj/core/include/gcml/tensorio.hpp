#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "gcml/error.hpp"

namespace gcml {

// Dense row-major f32 tensor. Serialized as a GCT1 file:
//
//   bytes 0-3   "GCT1"
//   byte  4     dtype code (0x01 = f32)
//   byte  5     ndim (u8)
//   ndim x u32  dims, little-endian
//   payload     row-major f32, little-endian
//
// No padding and no trailing bytes.
struct TensorF32 {
  std::vector<std::uint32_t> shape;
  std::vector<float> data;

  TensorF32() = default;
  TensorF32(std::vector<std::uint32_t> shape, std::vector<float> data);

  std::size_t element_count() const;
  std::size_t ndim() const { return shape.size(); }

  // Throws kInvalidArgument if shape is empty, has a zero dim, or disagrees
  // with data.size().
  void validate() const;

  friend bool operator==(const TensorF32&, const TensorF32&) = default;
};

inline constexpr std::uint8_t kDtypeF32 = 0x01;

void write_tensor(const TensorF32& tensor, std::ostream& out);
TensorF32 read_tensor(std::istream& in);

// File variants. load_tensor also rejects trailing bytes.
void save_tensor(const TensorF32& tensor, const std::filesystem::path& path);
TensorF32 load_tensor(const std::filesystem::path& path);

struct DatasetSample {
  std::filesystem::path path;
  std::size_t label = 0;

  friend bool operator==(const DatasetSample&, const DatasetSample&) = default;
};

// JSON sidecar: {"classes": [...], "samples": [{"path": ..., "label": i}]}.
// Relative sample paths are resolved against the manifest's directory on read.
struct DatasetManifest {
  std::vector<std::string> class_labels;
  std::vector<DatasetSample> samples;

  void validate() const;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

DatasetManifest read_manifest(const std::filesystem::path& path);

// Sample paths are written relative to the manifest directory when possible.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

}  // namespace gcml
