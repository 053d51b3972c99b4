#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cstring>
#include <vector>

#include "mdbn/nn_ops.hpp"

namespace mdbn {

namespace {

std::atomic<ConvAlgorithm> g_default_algo{ConvAlgorithm::im2col};

// Target columns per forward tile; keeps the lowered tile in L2.
constexpr std::size_t kTileColumns = 2048;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>>;

struct ConvGeometry {
  std::size_t n, c_in, h, w, c_out, k, pad;
  std::size_t hw() const { return h * w; }
  std::size_t patch() const { return c_in * k * k; }
};

ConvGeometry geometry(const Shape& x, const Shape& weight) {
  return {x[0], x[1], x[2], x[3], weight[0], weight[2], (weight[2] - 1) / 2};
}

// Serial reference implementation.

template <typename T>
Tensor<T> forward_direct(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  const ConvGeometry g = geometry(x.shape(), weight.shape());
  Tensor<T> out({g.n, g.c_out, g.h, g.w});
  const auto ih = static_cast<std::ptrdiff_t>(g.h);
  const auto iw = static_cast<std::ptrdiff_t>(g.w);
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t o = 0; o < g.c_out; ++o) {
      for (std::ptrdiff_t y = 0; y < ih; ++y) {
        for (std::ptrdiff_t xo = 0; xo < iw; ++xo) {
          T acc = bias[o];
          for (std::size_t c = 0; c < g.c_in; ++c) {
            for (std::size_t ky = 0; ky < g.k; ++ky) {
              const std::ptrdiff_t sy = y + static_cast<std::ptrdiff_t>(ky) - pad;
              if (sy < 0 || sy >= ih) continue;
              for (std::size_t kx = 0; kx < g.k; ++kx) {
                const std::ptrdiff_t sx = xo + static_cast<std::ptrdiff_t>(kx) - pad;
                if (sx < 0 || sx >= iw) continue;
                acc += weight.at(o, c, ky, kx) *
                       x.at(n, c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
              }
            }
          }
          out.at(n, o, static_cast<std::size_t>(y), static_cast<std::size_t>(xo)) = acc;
        }
      }
    }
  }
  return out;
}

template <typename T>
Conv2dGrads<T> backward_direct(const Tensor<T>& x, const Tensor<T>& weight,
                               const Tensor<T>& grad_out, bool need_input) {
  const ConvGeometry g = geometry(x.shape(), weight.shape());
  Conv2dGrads<T> grads;
  grads.weight = Tensor<T>(weight.shape());
  grads.bias = Tensor<T>({g.c_out});
  if (need_input) grads.input = Tensor<T>(x.shape());
  const auto ih = static_cast<std::ptrdiff_t>(g.h);
  const auto iw = static_cast<std::ptrdiff_t>(g.w);
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  std::vector<double> bias_acc(g.c_out, 0.0);
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t o = 0; o < g.c_out; ++o) {
      for (std::ptrdiff_t y = 0; y < ih; ++y) {
        for (std::ptrdiff_t xo = 0; xo < iw; ++xo) {
          const T go = grad_out.at(n, o, static_cast<std::size_t>(y), static_cast<std::size_t>(xo));
          bias_acc[o] += static_cast<double>(go);
          for (std::size_t c = 0; c < g.c_in; ++c) {
            for (std::size_t ky = 0; ky < g.k; ++ky) {
              const std::ptrdiff_t sy = y + static_cast<std::ptrdiff_t>(ky) - pad;
              if (sy < 0 || sy >= ih) continue;
              for (std::size_t kx = 0; kx < g.k; ++kx) {
                const std::ptrdiff_t sx = xo + static_cast<std::ptrdiff_t>(kx) - pad;
                if (sx < 0 || sx >= iw) continue;
                const auto uy = static_cast<std::size_t>(sy);
                const auto ux = static_cast<std::size_t>(sx);
                grads.weight.at(o, c, ky, kx) += go * x.at(n, c, uy, ux);
                if (need_input) grads.input.at(n, c, uy, ux) += go * weight.at(o, c, ky, kx);
              }
            }
          }
        }
      }
    }
  }
  for (std::size_t o = 0; o < g.c_out; ++o) grads.bias[o] = static_cast<T>(bias_acc[o]);
  return grads;
}

// GEMM lowering. The column matrix has one row per (c, ky, kx) tap and one
// column per output pixel in rows [y0, y1).

template <typename T>
void im2col(const T* img, const ConvGeometry& g, std::size_t y0, std::size_t y1, T* col) {
  const std::size_t cols = (y1 - y0) * g.w;
  const auto ih = static_cast<std::ptrdiff_t>(g.h);
  const auto iw = static_cast<std::ptrdiff_t>(g.w);
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.c_in; ++c) {
    const T* plane = img + c * g.hw();
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx, ++row) {
        T* dst = col + row * cols;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        // Valid output x range for this horizontal offset.
        const std::ptrdiff_t x_lo = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t x_hi = std::min<std::ptrdiff_t>(iw, iw - dx);
        for (std::size_t y = y0; y < y1; ++y, dst += g.w) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
          if (sy < 0 || sy >= ih || x_lo >= x_hi) {
            std::fill(dst, dst + g.w, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(sy) * g.w;
          std::fill(dst, dst + x_lo, T{0});
          std::memcpy(dst + x_lo, src + (x_lo + dx), sizeof(T) * static_cast<std::size_t>(x_hi - x_lo));
          std::fill(dst + x_hi, dst + iw, T{0});
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* img) {
  const std::size_t cols = g.hw();
  const auto ih = static_cast<std::ptrdiff_t>(g.h);
  const auto iw = static_cast<std::ptrdiff_t>(g.w);
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.c_in; ++c) {
    T* plane = img + c * g.hw();
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx, ++row) {
        const T* src = col + row * cols;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        const std::ptrdiff_t x_lo = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t x_hi = std::min<std::ptrdiff_t>(iw, iw - dx);
        for (std::size_t y = 0; y < g.h; ++y, src += g.w) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
          if (sy < 0 || sy >= ih) continue;
          T* dst = plane + static_cast<std::size_t>(sy) * g.w;
          for (std::ptrdiff_t xo = x_lo; xo < x_hi; ++xo) dst[xo + dx] += src[xo];
        }
      }
    }
  }
}

template <typename T>
Tensor<T> forward_im2col(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  const ConvGeometry g = geometry(x.shape(), weight.shape());
  Tensor<T> out({g.n, g.c_out, g.h, g.w});
  const std::size_t rows_per_tile = std::max<std::size_t>(1, kTileColumns / g.w);
  const std::size_t tiles_per_image = (g.h + rows_per_tile - 1) / rows_per_tile;
  const auto tiles = static_cast<std::ptrdiff_t>(g.n * tiles_per_image);
  const std::size_t patch = g.patch();
  const ConstMatrixMap<T> wmat(weight.raw(), static_cast<Eigen::Index>(g.c_out),
                               static_cast<Eigen::Index>(patch),
                               Eigen::OuterStride<>(static_cast<Eigen::Index>(patch)));

#pragma omp parallel
  {
    std::vector<T> col(patch * rows_per_tile * g.w);
#pragma omp for schedule(static)
    for (std::ptrdiff_t t = 0; t < tiles; ++t) {
      const std::size_t n = static_cast<std::size_t>(t) / tiles_per_image;
      const std::size_t y0 = (static_cast<std::size_t>(t) % tiles_per_image) * rows_per_tile;
      const std::size_t y1 = std::min(g.h, y0 + rows_per_tile);
      const std::size_t cols = (y1 - y0) * g.w;
      im2col(x.raw() + n * g.c_in * g.hw(), g, y0, y1, col.data());
      const ConstMatrixMap<T> cmat(col.data(), static_cast<Eigen::Index>(patch),
                                   static_cast<Eigen::Index>(cols),
                                   Eigen::OuterStride<>(static_cast<Eigen::Index>(cols)));
      MatrixMap<T> omat(out.raw() + n * g.c_out * g.hw() + y0 * g.w,
                        static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(cols),
                        Eigen::OuterStride<>(static_cast<Eigen::Index>(g.hw())));
      omat.noalias() = wmat * cmat;
      for (std::size_t o = 0; o < g.c_out; ++o) {
        omat.row(static_cast<Eigen::Index>(o)).array() += bias[o];
      }
    }
  }
  return out;
}

template <typename T>
Conv2dGrads<T> backward_im2col(const Tensor<T>& x, const Tensor<T>& weight,
                               const Tensor<T>& grad_out, bool need_input) {
  const ConvGeometry g = geometry(x.shape(), weight.shape());
  const std::size_t patch = g.patch();
  const std::size_t hw = g.hw();
  const auto ep = static_cast<Eigen::Index>(patch);
  const auto ehw = static_cast<Eigen::Index>(hw);
  const auto eco = static_cast<Eigen::Index>(g.c_out);

  Conv2dGrads<T> grads;
  if (need_input) grads.input = Tensor<T>(x.shape());
  // Per-sample partials are reduced in sample order so the result does not
  // depend on the thread count.
  std::vector<T> weight_partial(g.n * g.c_out * patch);
  std::vector<double> bias_partial(g.n * g.c_out);
  const ConstMatrixMap<T> wmat(weight.raw(), eco, ep, Eigen::OuterStride<>(ep));
  const auto samples = static_cast<std::ptrdiff_t>(g.n);

#pragma omp parallel
  {
    std::vector<T> col(patch * hw);
#pragma omp for schedule(static)
    for (std::ptrdiff_t sn = 0; sn < samples; ++sn) {
      const auto n = static_cast<std::size_t>(sn);
      const T* gy = grad_out.raw() + n * g.c_out * hw;
      const ConstMatrixMap<T> gmat(gy, eco, ehw, Eigen::OuterStride<>(ehw));
      for (std::size_t o = 0; o < g.c_out; ++o) {
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += static_cast<double>(gy[o * hw + i]);
        bias_partial[n * g.c_out + o] = acc;
      }
      im2col(x.raw() + n * g.c_in * hw, g, 0, g.h, col.data());
      {
        const ConstMatrixMap<T> cmat(col.data(), ep, ehw, Eigen::OuterStride<>(ehw));
        MatrixMap<T> pw(weight_partial.data() + n * g.c_out * patch, eco, ep,
                        Eigen::OuterStride<>(ep));
        pw.noalias() = gmat * cmat.transpose();
      }
      if (need_input) {
        MatrixMap<T> cmat(col.data(), ep, ehw, Eigen::OuterStride<>(ehw));
        cmat.noalias() = wmat.transpose() * gmat;
        col2im_add(col.data(), g, grads.input.raw() + n * g.c_in * hw);
      }
    }
  }

  grads.weight = Tensor<T>(weight.shape());
  grads.bias = Tensor<T>({g.c_out});
  T* gw = grads.weight.raw();
  for (std::size_t n = 0; n < g.n; ++n) {
    const T* src = weight_partial.data() + n * g.c_out * patch;
    for (std::size_t i = 0; i < g.c_out * patch; ++i) gw[i] += src[i];
  }
  for (std::size_t o = 0; o < g.c_out; ++o) {
    double acc = 0.0;
    for (std::size_t n = 0; n < g.n; ++n) acc += bias_partial[n * g.c_out + o];
    grads.bias[o] = static_cast<T>(acc);
  }
  return grads;
}

}  // namespace

ConvAlgorithm default_conv_algorithm() noexcept { return g_default_algo.load(); }

void set_default_conv_algorithm(ConvAlgorithm algo) noexcept { g_default_algo.store(algo); }

const char* to_string(ConvAlgorithm algo) noexcept {
  return algo == ConvAlgorithm::direct ? "direct" : "im2col";
}

ConvAlgorithm conv_algorithm_from_string(const std::string& name) {
  if (name == "direct") return ConvAlgorithm::direct;
  if (name == "im2col") return ConvAlgorithm::im2col;
  throw std::invalid_argument("unknown conv algorithm '" + name + "' (expected direct|im2col)");
}

void validate_conv_shapes(const Shape& x, const Shape& weight, const Shape& bias) {
  if (x.size() != 4) throw ShapeError("conv2d: input must be NCHW, got " + shape_to_string(x));
  if (weight.size() != 4 || weight[2] != weight[3]) {
    throw ShapeError("conv2d: weight must be [C_out, C_in, k, k], got " + shape_to_string(weight));
  }
  if (weight[2] % 2 == 0) throw ShapeError("conv2d: kernel size must be odd");
  if (bias.size() != 1 || bias[0] != weight[0]) {
    throw ShapeError("conv2d: bias " + shape_to_string(bias) + " does not match weight " +
                     shape_to_string(weight));
  }
  if (x[1] != weight[1]) {
    throw ShapeError("conv2d: input has " + std::to_string(x[1]) + " channels, weight expects " +
                     std::to_string(weight[1]));
  }
  if (x[2] == 0 || x[3] == 0) throw ShapeError("conv2d: empty spatial dimensions");
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                         ConvAlgorithm algo) {
  validate_conv_shapes(x.shape(), weight.shape(), bias.shape());
  return algo == ConvAlgorithm::direct ? forward_direct(x, weight, bias)
                                       : forward_im2col(x, weight, bias);
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight,
                               const Tensor<T>& grad_out, bool need_input, ConvAlgorithm algo) {
  validate_conv_shapes(x.shape(), weight.shape(), Shape{weight.dim(0)});
  require_same_shape(grad_out.shape(), Shape{x.dim(0), weight.dim(0), x.dim(2), x.dim(3)},
                     "conv2d backward");
  return algo == ConvAlgorithm::direct ? backward_direct(x, weight, grad_out, need_input)
                                       : backward_im2col(x, weight, grad_out, need_input);
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, ConvAlgorithm algo) {
  Tape<T>& tape = *x.tape;
  const std::size_t ix = x.id;
  const std::size_t iw = weight.id;
  return tape.record(conv2d_forward(x.value(), weight.value(), bias.value(), algo),
                     {x.id, weight.id, bias.id},
                     [ix, iw, algo](const Tape<T>& t, const Tensor<T>& g,
                                    std::span<const bool> needs, std::span<Tensor<T>> gin) {
                       Conv2dGrads<T> grads =
                           conv2d_backward(t.value(ix), t.value(iw), g, needs[0], algo);
                       if (needs[0]) gin[0] = std::move(grads.input);
                       if (needs[1]) gin[1] = std::move(grads.weight);
                       if (needs[2]) gin[2] = std::move(grads.bias);
                     });
}

#define MDBN_INSTANTIATE(T)                                                                  \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                    ConvAlgorithm);                                          \
  template Conv2dGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&,                \
                                          const Tensor<T>&, bool, ConvAlgorithm);            \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, ConvAlgorithm);

MDBN_INSTANTIATE(float)
MDBN_INSTANTIATE(double)

#undef MDBN_INSTANTIATE

}  // namespace mdbn
