#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mdbn/image.hpp"
#include "mdbn/model.hpp"

namespace mdbn {

// Reported in place of +inf when two images are identical.
inline constexpr double kPsnrCap = 100.0;

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 255.0;
};

// Luma of an RGB image on the [0, 255] scale, with `crop` pixels removed from
// every border.
std::vector<double> cropped_luma(const ImageBuffer& rgb, std::size_t crop, std::size_t& width,
                                 std::size_t& height);

// Plane metrics on values in [0, 255].
double psnr_plane(const std::vector<double>& a, const std::vector<double>& b);
double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, std::size_t width,
                  std::size_t height, const SsimOptions& options = {});

// Y-channel PSNR / SSIM between RGB images after cropping `crop` border pixels
// (conventionally the scale factor).
double psnr_y(const ImageBuffer& sr, const ImageBuffer& hr, std::size_t crop);
double ssim_y(const ImageBuffer& sr, const ImageBuffer& hr, std::size_t crop,
              const SsimOptions& options = {});

enum class EvalMode { bicubic, model };
const char* to_string(EvalMode m) noexcept;
EvalMode eval_mode_from_string(const std::string& s);

struct EvalProtocol {
  EvalMode mode = EvalMode::bicubic;
  std::size_t scale = 2;
  std::size_t crop = 2;
  std::string colorspace = "ycbcr601-y";
};

struct ImageScore {
  std::string image;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct SkippedImage {
  std::string image;
  std::string reason;
};

struct EvalReport {
  EvalProtocol protocol;
  std::vector<ImageScore> images;
  std::vector<SkippedImage> skipped;

  double mean_psnr() const;
  double mean_ssim() const;
};

// image,psnr_db,ssim rows, a MEAN row, then one "# skipped" comment per
// unreadable image.
std::string report_csv(const EvalReport& report);
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);

struct BenchOptions {
  EvalMode mode = EvalMode::bicubic;
  std::size_t scale = 2;
  std::optional<std::size_t> crop;  // defaults to scale
  std::filesystem::path hr_dir;
  // Optional pre-made LR images, matched by name ("x.png" or "xx<scale>.png").
  // When absent, LR images are synthesized from HR.
  std::optional<std::filesystem::path> lr_dir;
  std::optional<std::filesystem::path> sr_out_dir;  // SR PNGs written here
  const Model<float>* model = nullptr;              // required in model mode
};

// Super-resolves every PNG in hr_dir and scores it against the HR image. The
// SR output is clamped and quantized to 8 bits before scoring; when
// sr_out_dir is set the written PNG is read back and scored.
EvalReport bench_dir(const BenchOptions& options);

struct CropSweepRow {
  std::size_t crop = 0;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
};
std::vector<CropSweepRow> crop_sweep(BenchOptions options, const std::vector<std::size_t>& crops);

// SR of one RGB image through the model: clamp, quantize.
ImageBuffer super_resolve(const Model<float>& model, const ImageBuffer& lr);
ImageBuffer bicubic_upscale(const ImageBuffer& lr, std::size_t scale);

struct TimingOptions {
  std::size_t width = 320;
  std::size_t height = 180;
  std::size_t count = 50;
  std::size_t warmup = 3;
  std::uint64_t seed = 0;
};

struct TimingResult {
  std::size_t count = 0;
  std::size_t warmup = 0;
  double mean_ms = 0.0;
  double min_ms = 0.0;
  double max_ms = 0.0;
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t scale = 0;
  std::vector<double> samples_ms;
};

// Wall-clock time of single forward passes on random inputs, one thread.
TimingResult time_inference(const Model<float>& model, const TimingOptions& options = {});
std::string timing_json(const TimingResult& result);

}  // namespace mdbn
