#pragma once

#include "fmu/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace fmu {

// 8-bit image as it exists on disk (0-255 scale). The curation filters
// operate on this form directly.
struct RawImage {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<uint8_t> pixels;  // row-major, interleaved

  uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

// Normalized H*W x 3 image in [-1, 1], the currency every model op consumes.
template <typename S>
struct ImageTensor {
  int height = 0;
  int width = 0;
  Mat<S> data;  // rows = height*width (row-major), cols = 3

  static ImageTensor constant(int h, int w, S value) {
    ImageTensor img;
    img.height = h;
    img.width = w;
    img.data = Mat<S>::Constant(static_cast<Index>(h) * w, 3, value);
    return img;
  }

  S at(int y, int x, int c) const { return data(static_cast<Index>(y) * width + x, c); }
  S& at(int y, int x, int c) { return data(static_cast<Index>(y) * width + x, c); }
};

template <typename S>
void validate_image(const ImageTensor<S>& img, const std::string& what) {
  check_dim(img.height >= 8 && img.width >= 8, what + ": image must be at least 8x8");
  check_dim(img.data.rows() == static_cast<Index>(img.height) * img.width && img.data.cols() == 3,
            what + ": image buffer does not match declared size");
  if (!img.data.allFinite()) throw DimensionError(what + ": non-finite pixel values");
  if (img.data.minCoeff() < S(-1) || img.data.maxCoeff() > S(1))
    throw RangeError(what + ": pixel values outside [-1, 1]");
}

template <typename S>
ImageTensor<S> to_image_tensor(const RawImage& raw) {
  ImageTensor<S> img;
  img.height = raw.height;
  img.width = raw.width;
  img.data.resize(static_cast<Index>(raw.height) * raw.width, 3);
  for (int y = 0; y < raw.height; ++y)
    for (int x = 0; x < raw.width; ++x)
      for (int c = 0; c < 3; ++c)
        img.data(static_cast<Index>(y) * raw.width + x, c) =
            static_cast<S>(raw.at(y, x, c) / 127.5 - 1.0);
  return img;
}

template <typename S>
RawImage to_raw_image(const ImageTensor<S>& img) {
  RawImage raw;
  raw.width = img.width;
  raw.height = img.height;
  raw.channels = 3;
  raw.pixels.resize(static_cast<size_t>(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = (static_cast<double>(img.at(y, x, c)) + 1.0) * 127.5;
        long q = std::lround(v);
        raw.at(y, x, c) = static_cast<uint8_t>(std::clamp(q, 0l, 255l));
      }
  return raw;
}

// Bilinear, half-pixel centers, edge clamped.
template <typename S>
ImageTensor<S> resize_bilinear(const ImageTensor<S>& src, int out_h, int out_w) {
  check_param(out_h >= 1 && out_w >= 1, "resize: output size must be positive");
  ImageTensor<S> dst;
  dst.height = out_h;
  dst.width = out_w;
  dst.data.resize(static_cast<Index>(out_h) * out_w, 3);
  const double sy = static_cast<double>(src.height) / out_h;
  const double sx = static_cast<double>(src.width) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y0c = std::clamp(y0, 0, src.height - 1);
    int y1c = std::clamp(y0 + 1, 0, src.height - 1);
    for (int ox = 0; ox < out_w; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x0c = std::clamp(x0, 0, src.width - 1);
      int x1c = std::clamp(x0 + 1, 0, src.width - 1);
      for (int c = 0; c < 3; ++c) {
        double v00 = src.at(y0c, x0c, c), v01 = src.at(y0c, x1c, c);
        double v10 = src.at(y1c, x0c, c), v11 = src.at(y1c, x1c, c);
        double v = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
        dst.at(oy, ox, c) = static_cast<S>(v);
      }
    }
  }
  return dst;
}

template <typename S>
ImageTensor<S> crop_image(const ImageTensor<S>& src, int x, int y, int side) {
  check_range(x >= 0 && y >= 0 && side > 0 && x + side <= src.width && y + side <= src.height,
              "crop: rectangle outside image bounds");
  ImageTensor<S> dst;
  dst.height = side;
  dst.width = side;
  dst.data.resize(static_cast<Index>(side) * side, 3);
  for (int oy = 0; oy < side; ++oy)
    for (int ox = 0; ox < side; ++ox)
      for (int c = 0; c < 3; ++c) dst.at(oy, ox, c) = src.at(y + oy, x + ox, c);
  return dst;
}

// Mean over pixels of the population std across the 3 channels, 0-255 scale.
inline double mean_channel_std(const RawImage& img) {
  double acc = 0.0;
  const size_t n = static_cast<size_t>(img.width) * img.height;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double r = img.at(y, x, 0), g = img.at(y, x, 1), b = img.at(y, x, 2);
      double mu = (r + g + b) / 3.0;
      double var = ((r - mu) * (r - mu) + (g - mu) * (g - mu) + (b - mu) * (b - mu)) / 3.0;
      acc += std::sqrt(var);
    }
  return n == 0 ? 0.0 : acc / static_cast<double>(n);
}

}  // namespace fmu
