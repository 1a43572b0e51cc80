#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>

namespace clpoison {

using Real = double;

/// Batches are stored one sample per row; image rows are channel-major (C, H, W).
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
using RowVector = Eigen::Matrix<Real, 1, Eigen::Dynamic>;

struct ImageShape {
  int channels = 0;
  int height = 0;
  int width = 0;

  int plane() const { return height * width; }
  int size() const { return channels * height * width; }
  bool valid() const { return channels > 0 && height > 0 && width > 0; }
  bool operator==(const ImageShape&) const = default;
  std::string str() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
  }
};

/// FNV-1a over raw bytes; stable across platforms with the same endianness.
class Fnv1a {
 public:
  void update(const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  template <typename T>
  void update_value(const T& v) {
    update(&v, sizeof(T));
  }
  std::uint64_t digest() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

}  // namespace clpoison
