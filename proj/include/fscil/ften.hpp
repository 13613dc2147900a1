#pragma once

// FTEN tensor files.
//
//   bytes 0-3  magic "FTEN"
//   byte  4    version (1)
//   byte  5    dtype (1 = float32, 2 = float64)
//   byte  6    rank r
//   byte  7    reserved (0)
//   then r little-endian uint64 extents, then the row-major little-endian payload.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <vector>

#include "fscil/error.hpp"
#include "fscil/tensor.hpp"

namespace fscil::ften {

static_assert(std::endian::native == std::endian::little, "FTEN I/O assumes a little-endian host");

inline constexpr std::uint8_t kVersion = 1;

enum class DType : std::uint8_t { float32 = 1, float64 = 2 };

// Decoded file contents with the payload widened to double.
struct RawTensor {
  DType dtype = DType::float64;
  Shape shape;
  std::vector<double> values;
};

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "FTEN stores float32 or float64");
  return std::is_same_v<T, float> ? DType::float32 : DType::float64;
}

template <typename T>
std::vector<std::uint8_t> encode(const Shape& shape, std::span<const T> values) {
  if (shape.size() > 255) throw FormatError("FTEN: rank exceeds 255");
  if (shape_numel(shape) != values.size()) throw ShapeError("FTEN: payload size does not match shape");
  std::vector<std::uint8_t> out{'F', 'T', 'E', 'N', kVersion, static_cast<std::uint8_t>(dtype_of<T>()),
                                static_cast<std::uint8_t>(shape.size()), 0};
  for (const std::size_t e : shape) {
    const auto v = static_cast<std::uint64_t>(e);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof v);
  }
  const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
  out.insert(out.end(), p, p + values.size() * sizeof(T));
  return out;
}

inline RawTensor decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "FTEN", 4) != 0) throw FormatError("bad magic");
  if (bytes.size() < 8) throw FormatError("truncated payload");
  if (bytes[4] != kVersion) throw FormatError("unsupported version " + std::to_string(bytes[4]));
  const std::uint8_t code = bytes[5];
  if (code != 1 && code != 2) throw FormatError("unsupported dtype code " + std::to_string(code));
  const std::size_t rank = bytes[6];
  std::size_t offset = 8;
  if (bytes.size() < offset + rank * 8) throw FormatError("truncated payload");
  RawTensor raw;
  raw.dtype = static_cast<DType>(code);
  for (std::size_t i = 0; i < rank; ++i) {
    std::uint64_t e;
    std::memcpy(&e, bytes.data() + offset, sizeof e);
    raw.shape.push_back(static_cast<std::size_t>(e));
    offset += 8;
  }
  const std::size_t width = raw.dtype == DType::float32 ? 4 : 8;
  const std::size_t count = shape_numel(raw.shape);
  if (count != 0 && (bytes.size() - offset) / width < count) throw FormatError("truncated payload");
  if (bytes.size() - offset != count * width) throw FormatError("trailing bytes after payload");
  raw.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (raw.dtype == DType::float32) {
      float v;
      std::memcpy(&v, bytes.data() + offset + i * 4, 4);
      raw.values[i] = v;
    } else {
      std::memcpy(&raw.values[i], bytes.data() + offset + i * 8, 8);
    }
  }
  return raw;
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path);
}

// Values are converted to T; a float64 file read as float32 rounds.
template <typename T>
Tensor<T> to_tensor(const RawTensor& raw) {
  std::vector<T> data(raw.values.begin(), raw.values.end());
  return Tensor<T>(raw.shape, std::move(data));
}

template <typename T>
Tensor<T> load(const std::string& path) {
  return to_tensor<T>(decode(read_bytes(path)));
}

inline RawTensor load_raw(const std::string& path) { return decode(read_bytes(path)); }

template <typename T>
void save(const std::string& path, const Tensor<T>& tensor) {
  write_bytes(path, encode<T>(tensor.shape(), tensor.data()));
}

}  // namespace fscil::ften
