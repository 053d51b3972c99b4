#include "mdbn/evaluator.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mdbn/data.hpp"

namespace mdbn {

std::vector<double> cropped_luma(const ImageBuffer& rgb, std::size_t crop, std::size_t& width,
                                 std::size_t& height) {
  if (2 * crop >= rgb.width || 2 * crop >= rgb.height) {
    throw std::invalid_argument("image " + std::to_string(rgb.width) + "x" +
                                std::to_string(rgb.height) + " is too small for a border crop of " +
                                std::to_string(crop));
  }
  const ImageBuffer y = rgb_to_ycbcr_y(rgb);
  width = rgb.width - 2 * crop;
  height = rgb.height - 2 * crop;
  std::vector<double> out(width * height);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = 255.0 * y.at(0, r + crop, c + crop);
  }
  return out;
}

double psnr_plane(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("psnr: plane size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

namespace {

std::vector<double> gaussian_taps(std::size_t n, double sigma) {
  std::vector<double> g(n);
  const double c = (static_cast<double>(n) - 1.0) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i) - c;
    g[i] = std::exp(-x * x / (2.0 * sigma * sigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

// Separable 'valid' correlation.
std::vector<double> filter_valid(const std::vector<double>& src, std::size_t w, std::size_t h,
                                 const std::vector<double>& g) {
  const std::size_t n = g.size();
  const std::size_t ow = w - n + 1;
  const std::size_t oh = h - n + 1;
  std::vector<double> rows(ow * h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += g[k] * src[y * w + x + k];
      rows[y * ow + x] = acc;
    }
  }
  std::vector<double> out(ow * oh);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += g[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace

double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, std::size_t width,
                  std::size_t height, const SsimOptions& o) {
  if (a.size() != b.size() || a.size() != width * height) {
    throw std::invalid_argument("ssim: plane size mismatch");
  }
  if (width < o.window || height < o.window) {
    throw std::invalid_argument("ssim: image " + std::to_string(width) + "x" + std::to_string(height) +
                                " is smaller than the " + std::to_string(o.window) + "px window");
  }
  const std::vector<double> g = gaussian_taps(o.window, o.sigma);
  std::vector<double> aa(a.size());
  std::vector<double> bb(a.size());
  std::vector<double> ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = filter_valid(a, width, height, g);
  const auto mu_b = filter_valid(b, width, height, g);
  const auto s_aa = filter_valid(aa, width, height, g);
  const auto s_bb = filter_valid(bb, width, height, g);
  const auto s_ab = filter_valid(ab, width, height, g);
  const double c1 = (o.k1 * o.dynamic_range) * (o.k1 * o.dynamic_range);
  const double c2 = (o.k2 * o.dynamic_range) * (o.k2 * o.dynamic_range);
  double acc = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i];
    const double mb = mu_b[i];
    const double va = s_aa[i] - ma * ma;
    const double vb = s_bb[i] - mb * mb;
    const double cov = s_ab[i] - ma * mb;
    acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return acc / static_cast<double>(mu_a.size());
}

namespace {

void require_comparable(const ImageBuffer& sr, const ImageBuffer& hr) {
  if (sr.width != hr.width || sr.height != hr.height) {
    throw std::invalid_argument("image size mismatch: " + std::to_string(sr.width) + "x" +
                                std::to_string(sr.height) + " vs " + std::to_string(hr.width) +
                                "x" + std::to_string(hr.height));
  }
}

}  // namespace

double psnr_y(const ImageBuffer& sr, const ImageBuffer& hr, std::size_t crop) {
  require_comparable(sr, hr);
  std::size_t w = 0;
  std::size_t h = 0;
  const auto a = cropped_luma(sr, crop, w, h);
  const auto b = cropped_luma(hr, crop, w, h);
  return psnr_plane(a, b);
}

double ssim_y(const ImageBuffer& sr, const ImageBuffer& hr, std::size_t crop, const SsimOptions& options) {
  require_comparable(sr, hr);
  std::size_t w = 0;
  std::size_t h = 0;
  const auto a = cropped_luma(sr, crop, w, h);
  const auto b = cropped_luma(hr, crop, w, h);
  return ssim_plane(a, b, w, h, options);
}

const char* to_string(EvalMode m) noexcept { return m == EvalMode::bicubic ? "bicubic" : "model"; }

EvalMode eval_mode_from_string(const std::string& s) {
  if (s == "bicubic") return EvalMode::bicubic;
  if (s == "model") return EvalMode::model;
  throw std::invalid_argument("unknown eval mode '" + s + "' (expected bicubic|model)");
}

double EvalReport::mean_psnr() const {
  if (images.empty()) throw std::logic_error("report has no scored images");
  double acc = 0.0;
  for (const ImageScore& s : images) acc += s.psnr_db;
  return acc / static_cast<double>(images.size());
}

double EvalReport::mean_ssim() const {
  if (images.empty()) throw std::logic_error("report has no scored images");
  double acc = 0.0;
  for (const ImageScore& s : images) acc += s.ssim;
  return acc / static_cast<double>(images.size());
}

std::string report_csv(const EvalReport& r) {
  std::string out = "image,psnr_db,ssim\n";
  char buf[256];
  for (const ImageScore& s : r.images) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f\n", s.image.c_str(), s.psnr_db, s.ssim);
    out += buf;
  }
  if (!r.images.empty()) {
    std::snprintf(buf, sizeof buf, "MEAN,%.6f,%.6f\n", r.mean_psnr(), r.mean_ssim());
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "# mode=%s scale=%zu crop=%zu colorspace=%s\n",
                to_string(r.protocol.mode), r.protocol.scale, r.protocol.crop,
                r.protocol.colorspace.c_str());
  out += buf;
  for (const SkippedImage& s : r.skipped) out += "# skipped " + s.image + ": " + s.reason + "\n";
  return out;
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write report " + path.string());
  out << report_csv(report);
}

ImageBuffer bicubic_upscale(const ImageBuffer& lr, std::size_t scale) {
  return quantize_u8(bicubic_resize(lr, lr.width * scale, lr.height * scale));
}

ImageBuffer super_resolve(const Model<float>& model, const ImageBuffer& lr) {
  const Tensor<float> x = image_to_tensor(lr);
  const Tensor<float> batch = Tensor<float>(x).reshaped({1, 3, lr.height, lr.width});
  return quantize_u8(tensor_to_image(infer(model, batch)));
}

namespace {

std::optional<std::filesystem::path> find_lr(const std::filesystem::path& lr_dir,
                                             const std::filesystem::path& hr_file,
                                             std::size_t scale) {
  const std::string stem = hr_file.stem().string();
  for (const std::string& name :
       {stem + ".png", stem + "x" + std::to_string(scale) + ".png",
        stem + "_x" + std::to_string(scale) + ".png"}) {
    if (std::filesystem::exists(lr_dir / name)) return lr_dir / name;
  }
  return std::nullopt;
}

}  // namespace

EvalReport bench_dir(const BenchOptions& o) {
  if (o.mode == EvalMode::model && o.model == nullptr) {
    throw std::invalid_argument("model mode requires a loaded model");
  }
  if (o.mode == EvalMode::model && o.model->config().scale != o.scale) {
    throw std::invalid_argument("model scale x" + std::to_string(o.model->config().scale) +
                                " does not match requested scale x" + std::to_string(o.scale));
  }
  const auto files = build_manifest(o.hr_dir);
  if (files.empty()) throw std::invalid_argument("no PNG images in " + o.hr_dir.string());
  if (o.sr_out_dir) std::filesystem::create_directories(*o.sr_out_dir);

  EvalReport report;
  report.protocol.mode = o.mode;
  report.protocol.scale = o.scale;
  report.protocol.crop = o.crop.value_or(o.scale);
  for (const auto& file : files) {
    const std::string name = file.stem().string();
    try {
      ImageBuffer hr = png_read(file);
      if (hr.planes == 1) hr = gray_to_rgb(hr);
      hr = crop_to_multiple(hr, o.scale);
      ImageBuffer lr;
      if (o.lr_dir) {
        const auto lr_file = find_lr(*o.lr_dir, file, o.scale);
        if (!lr_file) throw std::runtime_error("no LR counterpart in " + o.lr_dir->string());
        lr = png_read(*lr_file);
        if (lr.planes == 1) lr = gray_to_rgb(lr);
        if (lr.width * o.scale != hr.width || lr.height * o.scale != hr.height) {
          throw std::runtime_error("LR size does not match HR / scale");
        }
      } else {
        lr = degrade(hr, o.scale);
      }
      ImageBuffer sr = o.mode == EvalMode::bicubic ? bicubic_upscale(lr, o.scale)
                                                    : super_resolve(*o.model, lr);
      if (o.sr_out_dir) {
        const auto out = *o.sr_out_dir / (name + "_x" + std::to_string(o.scale) + ".png");
        png_write(out, sr);
        sr = png_read(out);
      }
      report.images.push_back({name, psnr_y(sr, hr, report.protocol.crop),
                               ssim_y(sr, hr, report.protocol.crop)});
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping " << file.string() << ": " << e.what() << "\n";
      report.skipped.push_back({name, e.what()});
    }
  }
  if (report.images.empty()) {
    throw std::runtime_error("no image in " + o.hr_dir.string() + " could be evaluated");
  }
  return report;
}

std::vector<CropSweepRow> crop_sweep(BenchOptions options, const std::vector<std::size_t>& crops) {
  std::vector<CropSweepRow> rows;
  options.sr_out_dir.reset();
  for (std::size_t c : crops) {
    options.crop = c;
    const EvalReport r = bench_dir(options);
    rows.push_back({c, r.mean_psnr(), r.mean_ssim()});
  }
  return rows;
}

TimingResult time_inference(const Model<float>& model, const TimingOptions& o) {
  if (o.count == 0) throw std::invalid_argument("timing count must be positive");
  const int saved_threads = omp_get_max_threads();
  omp_set_num_threads(1);
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  auto make_input = [&] {
    Tensor<float> x({1, 3, o.height, o.width});
    for (float& v : x.data()) v = u(rng);
    return x;
  };
  TimingResult r;
  r.count = o.count;
  r.warmup = o.warmup;
  r.width = o.width;
  r.height = o.height;
  r.scale = model.config().scale;
  volatile float sink = 0.0f;
  for (std::size_t i = 0; i < o.warmup; ++i) sink = sink + infer(model, make_input())[0];
  for (std::size_t i = 0; i < o.count; ++i) {
    const Tensor<float> x = make_input();
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor<float> y = infer(model, x);
    const auto t1 = std::chrono::steady_clock::now();
    sink = sink + y[0];
    r.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  omp_set_num_threads(saved_threads);
  double total = 0.0;
  for (double v : r.samples_ms) total += v;
  r.mean_ms = total / static_cast<double>(r.samples_ms.size());
  r.min_ms = *std::min_element(r.samples_ms.begin(), r.samples_ms.end());
  r.max_ms = *std::max_element(r.samples_ms.begin(), r.samples_ms.end());
  return r;
}

std::string timing_json(const TimingResult& r) {
  nlohmann::ordered_json j;
  j["count"] = r.count;
  j["warmup"] = r.warmup;
  j["mean_ms"] = r.mean_ms;
  j["min_ms"] = r.min_ms;
  j["max_ms"] = r.max_ms;
  j["width"] = r.width;
  j["height"] = r.height;
  j["scale"] = r.scale;
  return j.dump(2) + "\n";
}

}  // namespace mdbn
