#include "mdbn/spectral.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace mdbn {

namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

void require_map(const Tensor<double>& x, const char* what) {
  if (x.rank() != 2) {
    throw ShapeError(std::string(what) + ": expected an [H, W] map, got " + shape_to_string(x.shape()));
  }
}

}  // namespace

Tensor<double> fft2_magnitude(const Tensor<double>& x) {
  require_map(x, "fft2_magnitude");
  const std::size_t h = x.dim(0);
  const std::size_t w = x.dim(1);
  if (h < 2 || w < 2) {
    throw ShapeError("fft2_magnitude: both dimensions must be at least 2, got " +
                     shape_to_string(x.shape()));
  }
  const std::size_t n = h * w;
  fftw_complex* buf = fftw_alloc_complex(n);
  if (buf == nullptr) throw std::bad_alloc();
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), buf, buf, FFTW_FORWARD,
                            FFTW_ESTIMATE);
  }
  for (std::size_t i = 0; i < n; ++i) {
    buf[i][0] = x[i];
    buf[i][1] = 0.0;
  }
  fftw_execute(plan);
  Tensor<double> out({h, w});
  const std::size_t cy = h / 2;
  const std::size_t cx = w / 2;
  for (std::size_t u = 0; u < h; ++u) {
    for (std::size_t v = 0; v < w; ++v) {
      const double mag = std::hypot(buf[u * w + v][0], buf[u * w + v][1]);
      out[((u + cy) % h) * w + (v + cx) % w] = mag;
    }
  }
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(buf);
  return out;
}

NormalizedPair pair_normalize(const Tensor<double>& a, const Tensor<double>& b) {
  require_same_shape(a.shape(), b.shape(), "pair_normalize");
  NormalizedPair out;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const Tensor<double>* t : {&a, &b}) {
    for (double v : t->data()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  out.joint_min = lo;
  out.joint_max = hi;
  out.a = Tensor<double>(a.shape());
  out.b = Tensor<double>(b.shape());
  const double range = hi - lo;
  if (!(range >= 1e-12 * std::max(1.0, hi))) return out;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    out.a[i] = (a[i] - lo) / range;
    out.b[i] = (b[i] - lo) / range;
  }
  return out;
}

BandMeans radial_band_means(const Tensor<double>& m) {
  require_map(m, "radial_band_means");
  const std::size_t h = m.dim(0);
  const std::size_t w = m.dim(1);
  const double cy = static_cast<double>(h / 2);
  const double cx = static_cast<double>(w / 2);
  double sum[3] = {0.0, 0.0, 0.0};
  std::size_t count[3] = {0, 0, 0};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double ry = (static_cast<double>(y) - cy) / (static_cast<double>(h) / 2.0);
      const double rx = (static_cast<double>(x) - cx) / (static_cast<double>(w) / 2.0);
      const double r = std::sqrt(rx * rx + ry * ry);
      const int band = r < 0.25 ? 0 : (r > 0.375 ? 2 : 1);
      sum[band] += m[y * w + x];
      ++count[band];
    }
  }
  auto mean = [&](int b) {
    return count[b] == 0 ? std::numeric_limits<double>::quiet_NaN()
                         : sum[b] / static_cast<double>(count[b]);
  };
  return BandMeans{mean(0), mean(1), mean(2)};
}

DifferenceMap difference_map(const Tensor<double>& a, const Tensor<double>& b) {
  require_same_shape(a.shape(), b.shape(), "difference_map");
  DifferenceMap d;
  d.values = Tensor<double>(a.shape());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    d.values[i] = std::abs(a[i] - b[i]);
    acc += d.values[i];
  }
  d.mean = acc / static_cast<double>(a.numel());
  d.bands = radial_band_means(d.values);
  return d;
}

QuadResult quad_normalize_and_diff(const Tensor<double>& hf1, const Tensor<double>& lf1,
                                   const Tensor<double>& hf2, const Tensor<double>& lf2) {
  const std::array<const Tensor<double>*, 4> in = {&hf1, &lf1, &hf2, &lf2};
  for (const Tensor<double>* t : in) {
    require_map(*t, "quad_normalize_and_diff");
    require_same_shape(t->shape(), hf1.shape(), "quad_normalize_and_diff");
  }
  QuadResult q;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const Tensor<double>* t : in) {
    for (double v : t->data()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  q.joint_min = lo;
  q.joint_max = hi;
  const double range = hi - lo;
  const bool degenerate = !(range >= 1e-12 * std::max(1.0, hi));
  for (std::size_t k = 0; k < 4; ++k) {
    q.normalized[k] = Tensor<double>(hf1.shape());
    if (degenerate) continue;
    for (std::size_t i = 0; i < hf1.numel(); ++i) q.normalized[k][i] = ((*in[k])[i] - lo) / range;
  }
  q.d1 = difference_map(q.normalized[0], q.normalized[1]);
  q.d2 = difference_map(q.normalized[2], q.normalized[3]);
  return q;
}

Tensor<double> channel_mean(const Tensor<float>& f) {
  Shape s = f.shape();
  if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
  if (s.size() != 3 || s[0] == 0) {
    throw ShapeError("channel_mean expects [1, C, H, W] or [C, H, W], got " + shape_to_string(f.shape()));
  }
  const std::size_t c = s[0];
  const std::size_t plane = s[1] * s[2];
  Tensor<double> out({s[1], s[2]});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) out[i] += f[ch * plane + i];
  }
  for (double& v : out.data()) v /= static_cast<double>(c);
  return out;
}

ImageBuffer unit_map_to_image(const Tensor<double>& m) {
  require_map(m, "unit_map_to_image");
  ImageBuffer img = ImageBuffer::blank(m.dim(1), m.dim(0), 1, PixelDepth::normalized, ColorSpace::y_only);
  for (std::size_t i = 0; i < m.numel(); ++i) img.data[i] = m[i];
  return quantize_u8(img);
}

namespace {

struct BranchMaps {
  Tensor<double> hf;
  Tensor<double> lf;
};

BranchMaps branch_spectra(const Model<float>& model, const ImageBuffer& lr, const TapSite& site) {
  model.validate_tap_site(site);
  const Tensor<float> x = Tensor<float>(image_to_tensor(lr)).reshaped({1, 3, lr.height, lr.width});
  std::vector<FeatureTapRecord<float>> taps;
  infer(model, x, default_conv_algorithm(), {site}, &taps);
  if (taps.size() != 1) throw std::logic_error("feature tap did not fire");
  return {fft2_magnitude(channel_mean(taps[0].f_hf)), fft2_magnitude(channel_mean(taps[0].f_lf))};
}

nlohmann::ordered_json bands_json(const BandMeans& b) {
  auto num = [](double v) { return std::isnan(v) ? nlohmann::ordered_json() : nlohmann::ordered_json(v); };
  return {{"low", num(b.low)}, {"mid", num(b.mid)}, {"high", num(b.high)}};
}

void check_unit_range(const Tensor<double>& t, const char* what) {
  for (double v : t.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::logic_error(std::string(what) + " left [0, 1]");
  }
}

}  // namespace

std::string branch_spectrum_report(const Model<float>& model, const ImageBuffer& lr,
                                   const SpectrumReportOptions& o, const Model<float>* variant) {
  namespace fs = std::filesystem;
  if (lr.planes != 3) throw std::invalid_argument("spectrum report needs an RGB image");
  fs::create_directories(o.out_dir);
  const BranchMaps a = branch_spectra(model, lr, o.site);

  nlohmann::ordered_json j;
  j["tap_site"] = to_string(o.site);
  j["image"] = o.image_id;
  j["channel_reduction"] = "mean";
  j["feature_height"] = a.hf.dim(0);
  j["feature_width"] = a.hf.dim(1);

  auto write = [&](const std::string& name, const Tensor<double>& map) {
    check_unit_range(map, name.c_str());
    png_write(o.out_dir / (name + ".png"), unit_map_to_image(map));
  };
  if (variant == nullptr) {
    const NormalizedPair p = pair_normalize(a.hf, a.lf);
    const DifferenceMap d = difference_map(p.a, p.b);
    write("spectrum_hf", p.a);
    write("spectrum_lf", p.b);
    write("difference", d.values);
    j["model_ids"] = {o.model_id};
    j["normalization"] = "pair";
    j["mean_D"] = d.mean;
    j["band_means"] = bands_json(d.bands);
  } else {
    const BranchMaps b = branch_spectra(*variant, lr, o.site);
    const QuadResult q = quad_normalize_and_diff(a.hf, a.lf, b.hf, b.lf);
    write("spectrum_hf1", q.normalized[0]);
    write("spectrum_lf1", q.normalized[1]);
    write("spectrum_hf2", q.normalized[2]);
    write("spectrum_lf2", q.normalized[3]);
    write("difference_d1", q.d1.values);
    write("difference_d2", q.d2.values);
    j["model_ids"] = {o.model_id, o.variant_id};
    j["normalization"] = "joint over four maps";
    j["mean_D"] = {{"D1", q.d1.mean}, {"D2", q.d2.mean}};
    j["band_means"] = {{"D1", bands_json(q.d1.bands)}, {"D2", bands_json(q.d2.bands)}};
  }
  const std::string text = j.dump(2) + "\n";
  std::ofstream out(o.out_dir / "summary.json", std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (o.out_dir / "summary.json").string());
  out << text;
  return text;
}

}  // namespace mdbn
