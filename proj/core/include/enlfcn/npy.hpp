#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "enlfcn/labels.hpp"
#include "enlfcn/tensor.hpp"

namespace enlfcn {

/// Decoded NPY v1.0 payload: little-endian, C order, '<f4' | '<f8' | '<i4'.
struct NpyArray {
  DType dtype = DType::f32;
  Shape shape;
  std::vector<std::byte> bytes;

  std::size_t element_count() const { return shape_size(shape); }

  /// Converts f32/f64 payloads to T; rejects integer payloads.
  template <typename T>
  Tensor<T> to_tensor() const;

  /// Interprets a rank-2 '<i4' payload as a label map.
  LabelMap to_labels() const;
};

std::size_t dtype_size(DType d) noexcept;
const char* dtype_descr(DType d) noexcept;

/// Header + raw data, padded so the payload starts on a 64-byte boundary.
std::string encode_npy(DType dtype, const Shape& shape, std::span<const std::byte> payload);

/// Throws FormatError naming the byte offset of the first problem.
NpyArray decode_npy(std::span<const std::byte> file);

NpyArray read_npy(const std::filesystem::path& path);

template <typename T>
Tensor<T> read_tensor(const std::filesystem::path& path) {
  return read_npy(path).to_tensor<T>();
}

template <typename T>
void write_tensor(const std::filesystem::path& path, const Tensor<T>& t);

LabelMap read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const LabelMap& labels);

/// Writes bytes atomically enough for our purposes (truncate + write).
void write_file(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace enlfcn
