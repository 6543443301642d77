#pragma once

#include <string>
#include <vector>

namespace posefield {

// Row-major interleaved image with values in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c = 3, float fill = 0.0f)
      : width(w), height(h), channels(c), data(size_t(w) * size_t(h) * size_t(c), fill) {}

  float& at(int x, int y, int c) {
    return data[(size_t(y) * size_t(width) + size_t(x)) * size_t(channels) + size_t(c)];
  }
  float at(int x, int y, int c) const {
    return data[(size_t(y) * size_t(width) + size_t(x)) * size_t(channels) + size_t(c)];
  }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

// Minimal PNG codec (8-bit gray/RGB/RGBA, no interlacing) on top of zlib.
// Writing always emits 8-bit RGB with filter type 0, which keeps exports
// byte-deterministic.
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

// Raw float32 little-endian depth sidecar: magic "PFDEPTH1", u32 width,
// u32 height, then width*height floats.
void write_depth_raw(const std::string& path, int width, int height,
                     const std::vector<float>& depth);
std::vector<float> read_depth_raw(const std::string& path, int& width, int& height);

// 10*log10(1/MSE) over all channels, capped at 99 dB for identical images.
double psnr(const Image& a, const Image& b);

// Single-scale SSIM on the rec601 luma, 11x11 Gaussian window (sigma 1.5),
// K1 = 0.01, K2 = 0.03, dynamic range 1. Images must be at least 11x11.
double ssim(const Image& a, const Image& b);

}  // namespace posefield
