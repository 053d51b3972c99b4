#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdbn/tensor.hpp"

namespace mdbn {

enum class PixelDepth : std::uint8_t { u8, normalized };
enum class ColorSpace : std::uint8_t { rgb, ycbcr601, y_only };

// Planar raster. u8 images hold integral values in [0, 255]; normalized images
// hold [0, 1] nominally (resampling may overshoot until export).
struct ImageBuffer {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t planes = 0;
  PixelDepth depth = PixelDepth::normalized;
  ColorSpace colorspace = ColorSpace::rgb;
  std::vector<double> data;  // [plane][y][x]

  static ImageBuffer blank(std::size_t width, std::size_t height, std::size_t planes,
                           PixelDepth depth, ColorSpace colorspace);

  double& at(std::size_t p, std::size_t y, std::size_t x) {
    return data[(p * height + y) * width + x];
  }
  double at(std::size_t p, std::size_t y, std::size_t x) const {
    return data[(p * height + y) * width + x];
  }
  std::size_t plane_size() const { return width * height; }
};

// Clamp to [0, 1], scale to 255, round half away from zero.
std::uint8_t quantize_value(double normalized);
ImageBuffer to_normalized(const ImageBuffer& img);
ImageBuffer quantize_u8(const ImageBuffer& img);

// Keys cubic convolution kernel with a = -0.5.
double cubic_kernel(double x);

struct ResizeOptions {
  // Widen the kernel by 1/scale when shrinking (MATLAB imresize behaviour).
  // Disable only for ablation.
  bool antialias = true;
};

// One output sample's taps along a dimension.
struct ResizeContribution {
  std::vector<std::size_t> index;
  std::vector<double> weight;  // sums to 1
};

// MATLAB imresize contribution table: half-pixel centre mapping, antialiased
// kernel on downscale, weights normalized per output sample, out-of-range
// taps mirrored back into the image.
std::vector<ResizeContribution> resize_contributions(std::size_t in_len, std::size_t out_len,
                                                     bool antialias);

// Separable bicubic resampling in f64. Output is normalized and unclamped.
ImageBuffer bicubic_resize(const ImageBuffer& img, std::size_t out_w, std::size_t out_h,
                           ResizeOptions options = {});

// Studio-swing BT.601 luma: Y = 16/255 + (65.481 R + 128.553 G + 24.966 B) / 255
// for RGB in [0, 1]. Result is a normalized Y-only image.
ImageBuffer rgb_to_ycbcr_y(const ImageBuffer& img);

ImageBuffer crop(const ImageBuffer& img, std::size_t x0, std::size_t y0, std::size_t w,
                 std::size_t h);
// Centre crop so both dimensions divide `multiple`.
ImageBuffer crop_to_multiple(const ImageBuffer& img, std::size_t multiple);
ImageBuffer gray_to_rgb(const ImageBuffer& img);

// HR -> LR degradation: crop to a multiple of `scale`, bicubic downscale, and
// quantize to 8 bits as the LR file would be stored.
ImageBuffer degrade(const ImageBuffer& hr, std::size_t scale);

class ImageIoError : public std::runtime_error {
 public:
  enum class Kind { not_found, malformed, unsupported_depth, write_failed };
  ImageIoError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

// 8-bit RGB or grayscale PNG. Palette images expand to RGB; alpha is dropped
// with a warning on stderr.
ImageBuffer png_read(const std::filesystem::path& path);
// Writes RGB or Y-only planes; normalized images are quantized first.
void png_write(const std::filesystem::path& path, const ImageBuffer& img);

// [3, H, W] normalized float tensor from an RGB image.
Tensor<float> image_to_tensor(const ImageBuffer& img);
// Accepts [C, H, W] or [1, C, H, W]; result is normalized and unclamped.
ImageBuffer tensor_to_image(const Tensor<float>& t);

}  // namespace mdbn
