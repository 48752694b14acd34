#pragma once

// Little-endian raw buffer helpers shared by the scene and cache formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <type_traits>
#include <vector>

#include "semfuse/frames.hpp"

namespace semfuse::detail {

template <typename T>
T byteswap_value(T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i) {
    std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

template <typename T>
void to_little_endian(std::span<T> values) {
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    for (auto& v : values) v = byteswap_value(v);
  }
}

inline std::vector<char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SceneIoError(path, "missing or unreadable file");
  return std::vector<char>(std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>());
}

/// Reads exactly `expected` elements of T. A size mismatch is reported with
/// expected vs found element counts.
template <typename T>
std::vector<T> read_raw(const std::filesystem::path& path, std::size_t expected,
                        const std::string& what) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() != expected * sizeof(T)) {
    throw SceneIoError(
        path, "shape mismatch for " + what + ": expected " +
                  std::to_string(expected) + " values (" +
                  std::to_string(expected * sizeof(T)) + " bytes), found " +
                  std::to_string(bytes.size()) + " bytes");
  }
  std::vector<T> out(expected);
  if (expected > 0) std::memcpy(out.data(), bytes.data(), bytes.size());
  to_little_endian(std::span<T>(out));
  return out;
}

template <typename T>
void write_raw(const std::filesystem::path& path, std::span<const T> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw SceneIoError(path, "cannot open for writing");
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    std::vector<T> swapped(values.begin(), values.end());
    to_little_endian(std::span<T>(swapped));
    out.write(reinterpret_cast<const char*>(swapped.data()),
              static_cast<std::streamsize>(swapped.size() * sizeof(T)));
  } else {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(T)));
  }
  if (!out) throw SceneIoError(path, "write failed");
}

/// Sequential little-endian writer/reader for small structured binaries.
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}
  template <typename T>
  void put(T value) {
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
      value = byteswap_value(value);
    }
    out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }
  template <typename T>
  void put_span(std::span<const T> values) {
    for (const auto& v : values) put(v);
  }

 private:
  std::ostream& out_;
};

class BinaryReader {
 public:
  BinaryReader(std::span<const char> bytes, std::filesystem::path source)
      : bytes_(bytes), source_(std::move(source)) {}
  template <typename T>
  T get() {
    if (offset_ + sizeof(T) > bytes_.size()) {
      throw SceneIoError(source_, "truncated file at byte " +
                                      std::to_string(offset_));
    }
    T value;
    std::memcpy(&value, bytes_.data() + offset_, sizeof(T));
    offset_ += sizeof(T);
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
      value = byteswap_value(value);
    }
    return value;
  }
  bool done() const { return offset_ == bytes_.size(); }
  const std::filesystem::path& source() const { return source_; }

 private:
  std::span<const char> bytes_;
  std::filesystem::path source_;
  std::size_t offset_ = 0;
};

}  // namespace semfuse::detail
