#include "mdbn/image.hpp"

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <iostream>
#include <memory>

namespace mdbn {

ImageBuffer ImageBuffer::blank(std::size_t width, std::size_t height, std::size_t planes,
                               PixelDepth depth, ColorSpace colorspace) {
  ImageBuffer img;
  img.width = width;
  img.height = height;
  img.planes = planes;
  img.depth = depth;
  img.colorspace = colorspace;
  img.data.assign(width * height * planes, 0.0);
  return img;
}

std::uint8_t quantize_value(double normalized) {
  const double v = std::clamp(normalized, 0.0, 1.0) * 255.0;
  return static_cast<std::uint8_t>(std::round(v));  // std::round: half away from zero
}

ImageBuffer to_normalized(const ImageBuffer& img) {
  if (img.depth == PixelDepth::normalized) return img;
  ImageBuffer out = img;
  out.depth = PixelDepth::normalized;
  for (double& v : out.data) v /= 255.0;
  return out;
}

ImageBuffer quantize_u8(const ImageBuffer& img) {
  if (img.depth == PixelDepth::u8) return img;
  ImageBuffer out = img;
  out.depth = PixelDepth::u8;
  for (double& v : out.data) v = quantize_value(v);
  return out;
}

double cubic_kernel(double x) {
  const double ax = std::abs(x);
  const double ax2 = ax * ax;
  const double ax3 = ax2 * ax;
  if (ax <= 1.0) return 1.5 * ax3 - 2.5 * ax2 + 1.0;
  if (ax <= 2.0) return -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0;
  return 0.0;
}

std::vector<ResizeContribution> resize_contributions(std::size_t in_len, std::size_t out_len,
                                                     bool antialias) {
  if (in_len == 0 || out_len == 0) throw std::invalid_argument("resize: zero length");
  const double scale = static_cast<double>(out_len) / static_cast<double>(in_len);
  const bool widen = antialias && scale < 1.0;
  const double kernel_width = widen ? 4.0 / scale : 4.0;
  const auto taps = static_cast<std::ptrdiff_t>(std::ceil(kernel_width)) + 2;
  const auto period = static_cast<std::ptrdiff_t>(2 * in_len);

  std::vector<ResizeContribution> table(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    // 1-based coordinates, as in the MATLAB reference.
    const double u = static_cast<double>(i + 1) / scale + 0.5 * (1.0 - 1.0 / scale);
    const auto left = static_cast<std::ptrdiff_t>(std::floor(u - kernel_width / 2.0));
    ResizeContribution& c = table[i];
    double total = 0.0;
    for (std::ptrdiff_t j = 0; j < taps; ++j) {
      const std::ptrdiff_t idx = left + j;
      const double d = u - static_cast<double>(idx);
      const double w = widen ? scale * cubic_kernel(scale * d) : cubic_kernel(d);
      if (w == 0.0) continue;
      // Mirror into [1, in_len] with the sequence 1..n, n..1 repeating.
      std::ptrdiff_t m = (idx - 1) % period;
      if (m < 0) m += period;
      const auto n = static_cast<std::ptrdiff_t>(in_len);
      const std::ptrdiff_t zero_based = m < n ? m : period - 1 - m;
      c.index.push_back(static_cast<std::size_t>(zero_based));
      c.weight.push_back(w);
      total += w;
    }
    for (double& w : c.weight) w /= total;
  }
  return table;
}

namespace {

ImageBuffer resize_height(const ImageBuffer& img, std::size_t out_h, bool antialias) {
  const auto table = resize_contributions(img.height, out_h, antialias);
  ImageBuffer out = ImageBuffer::blank(img.width, out_h, img.planes, PixelDepth::normalized,
                                       img.colorspace);
  for (std::size_t p = 0; p < img.planes; ++p) {
    for (std::size_t y = 0; y < out_h; ++y) {
      const ResizeContribution& c = table[y];
      for (std::size_t x = 0; x < img.width; ++x) {
        double acc = 0.0;
        for (std::size_t t = 0; t < c.index.size(); ++t) acc += c.weight[t] * img.at(p, c.index[t], x);
        out.at(p, y, x) = acc;
      }
    }
  }
  return out;
}

ImageBuffer resize_width(const ImageBuffer& img, std::size_t out_w, bool antialias) {
  const auto table = resize_contributions(img.width, out_w, antialias);
  ImageBuffer out = ImageBuffer::blank(out_w, img.height, img.planes, PixelDepth::normalized,
                                       img.colorspace);
  for (std::size_t p = 0; p < img.planes; ++p) {
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t x = 0; x < out_w; ++x) {
        const ResizeContribution& c = table[x];
        double acc = 0.0;
        for (std::size_t t = 0; t < c.index.size(); ++t) acc += c.weight[t] * img.at(p, y, c.index[t]);
        out.at(p, y, x) = acc;
      }
    }
  }
  return out;
}

}  // namespace

ImageBuffer bicubic_resize(const ImageBuffer& img, std::size_t out_w, std::size_t out_h,
                           ResizeOptions options) {
  if (out_w == 0 || out_h == 0) throw std::invalid_argument("bicubic_resize: zero target size");
  if (img.width == 0 || img.height == 0) throw std::invalid_argument("bicubic_resize: empty image");
  const ImageBuffer src = to_normalized(img);
  const double sh = static_cast<double>(out_h) / static_cast<double>(img.height);
  const double sw = static_cast<double>(out_w) / static_cast<double>(img.width);
  // The dimension with the smaller scale goes first; rows first on a tie.
  if (sh <= sw) {
    return resize_width(resize_height(src, out_h, options.antialias), out_w, options.antialias);
  }
  return resize_height(resize_width(src, out_w, options.antialias), out_h, options.antialias);
}

ImageBuffer rgb_to_ycbcr_y(const ImageBuffer& img) {
  if (img.planes != 3 || img.colorspace != ColorSpace::rgb) {
    throw std::invalid_argument("rgb_to_ycbcr_y: input must be a 3-plane RGB image");
  }
  const ImageBuffer src = to_normalized(img);
  ImageBuffer out =
      ImageBuffer::blank(img.width, img.height, 1, PixelDepth::normalized, ColorSpace::y_only);
  const std::size_t n = img.plane_size();
  for (std::size_t i = 0; i < n; ++i) {
    const double r = src.data[i];
    const double g = src.data[n + i];
    const double b = src.data[2 * n + i];
    out.data[i] = (16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0;
  }
  return out;
}

ImageBuffer crop(const ImageBuffer& img, std::size_t x0, std::size_t y0, std::size_t w,
                 std::size_t h) {
  if (x0 + w > img.width || y0 + h > img.height) {
    throw std::out_of_range("crop window exceeds image bounds");
  }
  ImageBuffer out = ImageBuffer::blank(w, h, img.planes, img.depth, img.colorspace);
  for (std::size_t p = 0; p < img.planes; ++p) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) out.at(p, y, x) = img.at(p, y0 + y, x0 + x);
    }
  }
  return out;
}

ImageBuffer crop_to_multiple(const ImageBuffer& img, std::size_t multiple) {
  if (multiple == 0) throw std::invalid_argument("crop_to_multiple: zero multiple");
  const std::size_t w = img.width - img.width % multiple;
  const std::size_t h = img.height - img.height % multiple;
  if (w == 0 || h == 0) {
    throw std::invalid_argument("image smaller than the scale factor " + std::to_string(multiple));
  }
  if (w == img.width && h == img.height) return img;
  return crop(img, (img.width - w) / 2, (img.height - h) / 2, w, h);
}

ImageBuffer gray_to_rgb(const ImageBuffer& img) {
  if (img.planes != 1) throw std::invalid_argument("gray_to_rgb: expected one plane");
  ImageBuffer out = ImageBuffer::blank(img.width, img.height, 3, img.depth, ColorSpace::rgb);
  for (std::size_t p = 0; p < 3; ++p) {
    std::copy(img.data.begin(), img.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(p * img.plane_size()));
  }
  return out;
}

ImageBuffer degrade(const ImageBuffer& hr, std::size_t scale) {
  const ImageBuffer cropped = crop_to_multiple(hr, scale);
  return quantize_u8(
      bicubic_resize(cropped, cropped.width / scale, cropped.height / scale));
}

// --- PNG ---------------------------------------------------------------------

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
  auto* buf = static_cast<std::string*>(png_get_error_ptr(png));
  if (buf != nullptr) *buf = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace

ImageBuffer png_read(const std::filesystem::path& path) {
  using Kind = ImageIoError::Kind;
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw ImageIoError(Kind::not_found, "cannot open image " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw ImageIoError(Kind::malformed, path.string() + " is not a PNG file");
  }
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageIoError(Kind::malformed, "libpng initialisation failed");
  }
  ImageBuffer img;
  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows;
  volatile bool unsupported = false;
  volatile bool had_alpha = false;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageIoError(Kind::malformed, "malformed PNG " + path.string() + ": " + err);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (bit_depth == 16) {
    unsupported = true;
  } else {
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) {
      png_set_tRNS_to_alpha(png);
      had_alpha = true;
    }
    if (color & PNG_COLOR_MASK_ALPHA) had_alpha = true;
    png_read_update_info(png, info);
    const std::size_t w = png_get_image_width(png, info);
    const std::size_t h = png_get_image_height(png, info);
    const std::size_t channels = png_get_channels(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    pixels.resize(rowbytes * h);
    rows.resize(h);
    for (std::size_t y = 0; y < h; ++y) rows[y] = pixels.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);

    const std::size_t color_planes = channels >= 3 ? 3 : 1;
    img = ImageBuffer::blank(w, h, color_planes, PixelDepth::u8,
                             color_planes == 3 ? ColorSpace::rgb : ColorSpace::y_only);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t p = 0; p < color_planes; ++p) {
          img.at(p, y, x) = rows[y][x * channels + p];
        }
      }
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (unsupported) {
    throw ImageIoError(Kind::unsupported_depth,
                       path.string() + ": only 8-bit PNGs are supported (got 16-bit)");
  }
  if (had_alpha) std::cerr << "warning: dropping alpha channel of " << path.string() << "\n";
  return img;
}

void png_write(const std::filesystem::path& path, const ImageBuffer& img) {
  using Kind = ImageIoError::Kind;
  if (img.planes != 1 && img.planes != 3) {
    throw ImageIoError(Kind::write_failed, "png_write: image must have 1 or 3 planes");
  }
  const ImageBuffer q = quantize_u8(img);
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw ImageIoError(Kind::write_failed, "cannot open " + path.string() + " for writing");
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    throw ImageIoError(Kind::write_failed, "libpng initialisation failed");
  }
  std::vector<png_byte> pixels(q.width * q.height * q.planes);
  std::vector<png_bytep> rows(q.height);
  for (std::size_t y = 0; y < q.height; ++y) {
    rows[y] = pixels.data() + y * q.width * q.planes;
    for (std::size_t x = 0; x < q.width; ++x) {
      for (std::size_t p = 0; p < q.planes; ++p) {
        rows[y][x * q.planes + p] = static_cast<png_byte>(q.at(p, y, x));
      }
    }
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageIoError(Kind::write_failed, "failed writing " + path.string() + ": " + err);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(q.width), static_cast<png_uint_32>(q.height), 8,
               q.planes == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor<float> image_to_tensor(const ImageBuffer& img) {
  if (img.planes != 3) throw std::invalid_argument("image_to_tensor: expected an RGB image");
  const ImageBuffer n = to_normalized(img);
  Tensor<float> t({3, img.height, img.width});
  for (std::size_t i = 0; i < n.data.size(); ++i) t[i] = static_cast<float>(n.data[i]);
  return t;
}

ImageBuffer tensor_to_image(const Tensor<float>& t) {
  Shape s = t.shape();
  if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
  if (s.size() != 3 || (s[0] != 3 && s[0] != 1)) {
    throw ShapeError("tensor_to_image: expected [C, H, W] with C in {1, 3}, got " +
                     shape_to_string(t.shape()));
  }
  ImageBuffer img = ImageBuffer::blank(s[2], s[1], s[0], PixelDepth::normalized,
                                       s[0] == 3 ? ColorSpace::rgb : ColorSpace::y_only);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = t[i];
  return img;
}

}  // namespace mdbn
