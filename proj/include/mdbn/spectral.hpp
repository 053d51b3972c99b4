#pragma once

#include <array>
#include <filesystem>
#include <string>

#include "mdbn/image.hpp"
#include "mdbn/model.hpp"
#include "mdbn/tensor.hpp"

namespace mdbn {

// |DFT(x)| of a real [H, W] map with the zero-frequency bin moved to
// (H/2, W/2) (integer division). Requires H, W >= 2.
Tensor<double> fft2_magnitude(const Tensor<double>& x);

struct NormalizedPair {
  Tensor<double> a;
  Tensor<double> b;
  double joint_min = 0.0;
  double joint_max = 0.0;
};

// Min-max normalization with the range taken over both maps. A range below
// 1e-12 * max(1, max) gives all-zero outputs.
NormalizedPair pair_normalize(const Tensor<double>& a, const Tensor<double>& b);

struct BandMeans {
  double low = 0.0;   // normalized radius < 0.25
  double mid = 0.0;
  double high = 0.0;  // normalized radius > 0.375
};

// Means over radial bands of a DC-centred map. Radius is measured relative to
// Nyquist along each axis, so the bands are ellipses on non-square maps. An
// empty band reports NaN.
BandMeans radial_band_means(const Tensor<double>& centred);

struct DifferenceMap {
  Tensor<double> values;
  double mean = 0.0;
  BandMeans bands;
};

DifferenceMap difference_map(const Tensor<double>& a, const Tensor<double>& b);

struct QuadResult {
  std::array<Tensor<double>, 4> normalized;  // hf1, lf1, hf2, lf2
  double joint_min = 0.0;
  double joint_max = 0.0;
  DifferenceMap d1;  // |hf1 - lf1|
  DifferenceMap d2;  // |hf2 - lf2|
};

// Joint normalization over all four maps, then the two branch differences.
QuadResult quad_normalize_and_diff(const Tensor<double>& hf1, const Tensor<double>& lf1,
                                   const Tensor<double>& hf2, const Tensor<double>& lf2);

// Arithmetic mean over channels of a [1, C, H, W] or [C, H, W] feature map.
Tensor<double> channel_mean(const Tensor<float>& features);

// Linear map of [0, 1] to an 8-bit grayscale image.
ImageBuffer unit_map_to_image(const Tensor<double>& map);

struct SpectrumReportOptions {
  TapSite site;
  std::filesystem::path out_dir;
  std::string image_id;
  std::string model_id = "model";
  std::string variant_id = "variant";
};

// Taps the branch features of `model` (and of `variant`, when given) on one LR
// image, writes the spectra and difference maps as PNGs plus summary.json,
// and returns the JSON text.
std::string branch_spectrum_report(const Model<float>& model, const ImageBuffer& lr,
                                   const SpectrumReportOptions& options,
                                   const Model<float>* variant = nullptr);

}  // namespace mdbn
