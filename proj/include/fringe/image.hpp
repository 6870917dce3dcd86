#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace fringe {

/// Dense row-major 2D grid. Used for grayscale frames (float in [0,1]),
/// ring maps, masks and label images.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int width, int height, T fill = T{})
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(checked(width) * checked(height)), fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int x, int y) { return data_[index(x, y)]; }
  const T& operator()(int x, int y) const { return data_[index(x, y)]; }

  bool contains(int x, int y) const {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  // Edge-clamped read.
  const T& clamped(int x, int y) const {
    x = std::clamp(x, 0, width_ - 1);
    y = std::clamp(y, 0, height_ - 1);
    return data_[index(x, y)];
  }

  std::span<T> pixels() { return data_; }
  std::span<const T> pixels() const { return data_; }

  bool operator==(const Grid&) const = default;

 private:
  static int checked(int n) {
    if (n < 0) throw std::invalid_argument("grid dimension must be non-negative");
    return n;
  }
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using Image = Grid<float>;
using Mask = Grid<unsigned char>;

/// Bilinear sample at continuous pixel coordinates (pixel centers at integer
/// positions). Out-of-range coordinates are edge-clamped.
inline double bilinear(const Image& img, double x, double y) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0;
  const double fy = y - y0;
  const double p00 = img.clamped(x0, y0);
  const double p10 = img.clamped(x0 + 1, y0);
  const double p01 = img.clamped(x0, y0 + 1);
  const double p11 = img.clamped(x0 + 1, y0 + 1);
  return (p00 * (1 - fx) + p10 * fx) * (1 - fy) + (p01 * (1 - fx) + p11 * fx) * fy;
}

/// Separable convolution with a symmetric kernel (kernel.size() odd),
/// edge-clamped. Accumulation order is fixed so results are reproducible.
inline Image convolve_separable(const Image& src, std::span<const double> kernel) {
  const int r = static_cast<int>(kernel.size() / 2);
  Image tmp(src.width(), src.height());
  Image out(src.width(), src.height());
  for (int y = 0; y < src.height(); ++y) {
    for (int x = 0; x < src.width(); ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) acc += kernel[k + r] * src.clamped(x + k, y);
      tmp(x, y) = static_cast<float>(acc);
    }
  }
  for (int y = 0; y < src.height(); ++y) {
    for (int x = 0; x < src.width(); ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) acc += kernel[k + r] * tmp.clamped(x, y + k);
      out(x, y) = static_cast<float>(acc);
    }
  }
  return out;
}

/// Shift by an integer offset; uncovered pixels take `pad`.
template <typename T>
Grid<T> shifted(const Grid<T>& src, int dx, int dy, T pad) {
  Grid<T> out(src.width(), src.height(), pad);
  for (int y = 0; y < src.height(); ++y) {
    for (int x = 0; x < src.width(); ++x) {
      const int sx = x - dx;
      const int sy = y - dy;
      if (src.contains(sx, sy)) out(x, y) = src(sx, sy);
    }
  }
  return out;
}

/// Quantize a [0,1] float image to 8 bits and back, as a PNG round trip would.
inline Image quantize_8bit(const Image& img) {
  Image out(img.width(), img.height());
  auto src = img.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double v = std::clamp(static_cast<double>(src[i]), 0.0, 1.0);
    dst[i] = static_cast<float>(std::floor(v * 255.0 + 0.5) / 255.0);
  }
  return out;
}

}  // namespace fringe
