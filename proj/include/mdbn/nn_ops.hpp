#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "mdbn/autograd.hpp"
#include "mdbn/tensor.hpp"

namespace mdbn {

// Both algorithms implement the same cross-correlation contract. `direct` is
// the serial reference kept for testing; `im2col` lowers to GEMM and runs
// OpenMP-parallel over (sample, row-band) tiles.
enum class ConvAlgorithm : std::uint8_t { direct, im2col };

ConvAlgorithm default_conv_algorithm() noexcept;
void set_default_conv_algorithm(ConvAlgorithm algo) noexcept;
const char* to_string(ConvAlgorithm algo) noexcept;
ConvAlgorithm conv_algorithm_from_string(const std::string& name);

// Square kernel, stride 1, "same" zero padding of (k - 1) / 2.
template <typename T>
struct Conv2dParams {
  Tensor<T> weight;  // [C_out, C_in, k, k]
  Tensor<T> bias;    // [C_out]

  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t kernel() const { return weight.dim(2); }
  std::size_t padding() const { return (kernel() - 1) / 2; }
  std::size_t numel() const { return weight.numel() + bias.numel(); }

  template <typename U>
  Conv2dParams<U> cast() const {
    return {weight.template cast<U>(), bias.template cast<U>()};
  }
};

// Fan-in uniform initialization: weights ~ U(-s, s), s = sqrt(1 / (C_in k^2));
// zero bias. Deterministic per seed.
template <typename T>
Conv2dParams<T> init_conv(std::size_t out_channels, std::size_t in_channels, std::size_t kernel,
                          std::uint64_t seed);

template <typename T>
struct Conv2dGrads {
  Tensor<T> input;  // empty when not requested
  Tensor<T> weight;
  Tensor<T> bias;
};

void validate_conv_shapes(const Shape& x, const Shape& weight, const Shape& bias);

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                         ConvAlgorithm algo = default_conv_algorithm());

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight,
                               const Tensor<T>& grad_out, bool need_input,
                               ConvAlgorithm algo = default_conv_algorithm());

// GELU(x) = x * Phi(x) with the exact erf-based normal CDF.
template <typename T>
Tensor<T> gelu_forward(const Tensor<T>& x);
template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& grad_out);

inline constexpr double kDefaultLeakySlope = 0.01;

template <typename T>
Tensor<T> leaky_relu_forward(const Tensor<T>& x, double slope);
template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out, double slope);

// [N, C r^2, H, W] -> [N, C, rH, rW]:
//   out[n, c, r h + a, r w + b] = x[n, c r^2 + a r + b, h, w]
template <typename T>
Tensor<T> pixel_shuffle_forward(const Tensor<T>& x, std::size_t r);
// Exact inverse permutation of pixel_shuffle_forward.
template <typename T>
Tensor<T> pixel_unshuffle_forward(const Tensor<T>& x, std::size_t r);

// Taped versions.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, ConvAlgorithm algo = default_conv_algorithm());
template <typename T>
Var<T> gelu(Var<T> x);
template <typename T>
Var<T> leaky_relu(Var<T> x, double slope = kDefaultLeakySlope);
template <typename T>
Var<T> pixel_shuffle(Var<T> x, std::size_t r);

}  // namespace mdbn
