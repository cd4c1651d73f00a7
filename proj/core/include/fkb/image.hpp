#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fkb/error.hpp"

namespace fkb {

/// Row-major single-channel image.
template <typename T>
class Image {
 public:
  using value_type = T;

  Image() = default;
  Image(int width, int height, T fill = T{})
      : width_(width), height_(height), data_(checked_size(width, height), fill) {}
  Image(int width, int height, std::vector<T> data) : width_(width), height_(height), data_(std::move(data)) {
    if (data_.size() != checked_size(width, height)) {
      fail(ErrorCode::kDimensionMismatch, "image data length does not equal width * height");
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int x, int y) { return data_[index(x, y)]; }
  const T& operator()(int x, int y) const { return data_[index(x, y)]; }
  // Clamp-to-edge access.
  const T& at_clamped(int x, int y) const {
    x = x < 0 ? 0 : (x >= width_ ? width_ - 1 : x);
    y = y < 0 ? 0 : (y >= height_ ? height_ - 1 : y);
    return data_[index(x, y)];
  }

  std::span<T> pixels() { return data_; }
  std::span<const T> pixels() const { return data_; }
  std::span<T> row(int y) { return std::span<T>(data_).subspan(index(0, y), static_cast<std::size_t>(width_)); }
  std::span<const T> row(int y) const {
    return std::span<const T>(data_).subspan(index(0, y), static_cast<std::size_t>(width_));
  }

  bool same_shape(const auto& other) const { return width_ == other.width() && height_ == other.height(); }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  static std::size_t checked_size(int width, int height) {
    if (width < 0 || height < 0) fail(ErrorCode::kDimensionMismatch, "negative image dimensions");
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

/// 8-bit intensities in [0, 255].
using ImageU8 = Image<std::uint8_t>;
/// Normalized intensities in [0, 1]; also used for detector response maps.
using ImageF32 = Image<float>;
/// 0/1 masks.
using Mask = Image<std::uint8_t>;

ImageF32 to_float(const ImageU8& img);
// Round-half-up quantization with clamping to [0, 255].
ImageU8 to_u8(const ImageF32& img);
std::uint8_t quantize(float normalized);

// Format is chosen from the extension (.pgm or .png). Colour PNGs are
// converted with luma = 0.299 R + 0.587 G + 0.114 B.
ImageU8 load_image(const std::string& path);
void save_image(const std::string& path, const ImageU8& img);

ImageU8 load_pgm(const std::string& path);
void save_pgm(const std::string& path, const ImageU8& img);
ImageU8 load_png(const std::string& path);
void save_png(const std::string& path, const ImageU8& img);

// Align-corners bilinear resize with edge clamping:
// src = dst * (src_len - 1) / (dst_len - 1) for dst_len > 1, centre otherwise.
ImageF32 resize_bilinear(const ImageF32& img, int width, int height);
ImageU8 resize_bilinear(const ImageU8& img, int width, int height);

// out = in^gamma in normalized space. Throws RangeError for gamma <= 0.
ImageF32 gamma_correct(const ImageF32& img, double gamma);
ImageU8 gamma_correct(const ImageU8& img, double gamma);

// Bilinear sample at sub-pixel (x, y) in [0, w-1] x [0, h-1]; exact at
// integer coordinates.
float bilinear_sample(const ImageF32& img, double x, double y);

/// Lexicographically sorted image files (.pgm, .png) in `dir`, every
/// stride-th entry, truncated to `limit` (0 = no limit).
/// Throws IoError for a missing directory and EmptyDataset when nothing matches.
std::vector<std::string> ingest_sequence(const std::string& dir, int stride, int limit);

// Newline-separated UTF-8 path lists.
std::vector<std::string> read_path_list(const std::string& path);
void write_path_list(const std::string& path, std::span<const std::string> paths);

}  // namespace fkb
