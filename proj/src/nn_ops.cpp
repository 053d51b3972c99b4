#include "mdbn/nn_ops.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace mdbn {

namespace {

constexpr std::int64_t kParallelThreshold = 1 << 14;

// Standard normal CDF through erfc so the lower tail keeps its precision.
template <typename T>
T normal_cdf(T x) {
  return T(0.5) * std::erfc(-x * static_cast<T>(std::numbers::sqrt2 / 2));
}

template <typename T>
T normal_pdf(T x) {
  return static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2) *
         std::exp(T(-0.5) * x * x);
}

template <typename T, typename F>
Tensor<T> map_unary(const Tensor<T>& x, F f) {
  Tensor<T> out(x.shape());
  const T* px = x.raw();
  T* po = out.raw();
  const auto n = static_cast<std::int64_t>(x.numel());
#pragma omp parallel for if (n > kParallelThreshold)
  for (std::int64_t i = 0; i < n; ++i) po[i] = f(px[i]);
  return out;
}

template <typename T, typename F>
Tensor<T> map_binary(const Tensor<T>& x, const Tensor<T>& g, F f) {
  require_same_shape(x.shape(), g.shape(), "activation backward");
  Tensor<T> out(x.shape());
  const T* px = x.raw();
  const T* pg = g.raw();
  T* po = out.raw();
  const auto n = static_cast<std::int64_t>(x.numel());
#pragma omp parallel for if (n > kParallelThreshold)
  for (std::int64_t i = 0; i < n; ++i) po[i] = f(px[i], pg[i]);
  return out;
}

void check_slope(double slope) {
  if (!(slope > 0.0 && slope < 1.0)) {
    throw std::invalid_argument("leaky_relu slope must lie in (0, 1), got " +
                                std::to_string(slope));
  }
}

}  // namespace

template <typename T>
Conv2dParams<T> init_conv(std::size_t out_channels, std::size_t in_channels, std::size_t kernel,
                          std::uint64_t seed) {
  if (kernel % 2 == 0) throw std::invalid_argument("init_conv: kernel size must be odd");
  Conv2dParams<T> p{Tensor<T>({out_channels, in_channels, kernel, kernel}),
                    Tensor<T>({out_channels})};
  const double bound = std::sqrt(1.0 / static_cast<double>(in_channels * kernel * kernel));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (T& w : p.weight.data()) w = static_cast<T>(dist(rng));
  return p;
}

template <typename T>
Tensor<T> gelu_forward(const Tensor<T>& x) {
  return map_unary(x, [](T v) { return v * normal_cdf(v); });
}

template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
  return map_binary(x, grad_out,
                    [](T v, T g) { return g * (normal_cdf(v) + v * normal_pdf(v)); });
}

template <typename T>
Tensor<T> leaky_relu_forward(const Tensor<T>& x, double slope) {
  check_slope(slope);
  const T s = static_cast<T>(slope);
  return map_unary(x, [s](T v) { return v >= T{0} ? v : s * v; });
}

template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out, double slope) {
  check_slope(slope);
  const T s = static_cast<T>(slope);
  return map_binary(x, grad_out, [s](T v, T g) { return v >= T{0} ? g : s * g; });
}

template <typename T>
Tensor<T> pixel_shuffle_forward(const Tensor<T>& x, std::size_t r) {
  if (x.rank() != 4) throw ShapeError("pixel_shuffle: input must be NCHW");
  if (r == 0) throw std::invalid_argument("pixel_shuffle: factor must be >= 1");
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (cin % (r * r) != 0) {
    throw ShapeError("pixel_shuffle: " + std::to_string(cin) + " channels not divisible by " +
                     std::to_string(r * r));
  }
  const std::size_t c = cin / (r * r);
  Tensor<T> out({n, c, h * r, w * r});
  const auto planes = static_cast<std::int64_t>(n * c);
#pragma omp parallel for if (planes > 8)
  for (std::int64_t p = 0; p < planes; ++p) {
    const std::size_t nn = static_cast<std::size_t>(p) / c;
    const std::size_t cc = static_cast<std::size_t>(p) % c;
    for (std::size_t a = 0; a < r; ++a) {
      for (std::size_t b = 0; b < r; ++b) {
        const std::size_t src_c = cc * r * r + a * r + b;
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t xx = 0; xx < w; ++xx) {
            out.at(nn, cc, r * y + a, r * xx + b) = x.at(nn, src_c, y, xx);
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> pixel_unshuffle_forward(const Tensor<T>& x, std::size_t r) {
  if (x.rank() != 4) throw ShapeError("pixel_unshuffle: input must be NCHW");
  if (r == 0) throw std::invalid_argument("pixel_unshuffle: factor must be >= 1");
  const std::size_t n = x.dim(0), c = x.dim(1), hr = x.dim(2), wr = x.dim(3);
  if (hr % r != 0 || wr % r != 0) {
    throw ShapeError("pixel_unshuffle: spatial size " + shape_to_string(x.shape()) +
                     " not divisible by " + std::to_string(r));
  }
  const std::size_t h = hr / r, w = wr / r;
  Tensor<T> out({n, c * r * r, h, w});
  for (std::size_t nn = 0; nn < n; ++nn) {
    for (std::size_t cc = 0; cc < c; ++cc) {
      for (std::size_t a = 0; a < r; ++a) {
        for (std::size_t b = 0; b < r; ++b) {
          for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t xx = 0; xx < w; ++xx) {
              out.at(nn, cc * r * r + a * r + b, y, xx) = x.at(nn, cc, r * y + a, r * xx + b);
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
Var<T> gelu(Var<T> x) {
  const std::size_t ix = x.id;
  return x.tape->record(gelu_forward(x.value()), {ix},
                        [ix](const Tape<T>& t, const Tensor<T>& g, std::span<const bool> needs,
                             std::span<Tensor<T>> gin) {
                          if (needs[0]) gin[0] = gelu_backward(t.value(ix), g);
                        });
}

template <typename T>
Var<T> leaky_relu(Var<T> x, double slope) {
  const std::size_t ix = x.id;
  return x.tape->record(leaky_relu_forward(x.value(), slope), {ix},
                        [ix, slope](const Tape<T>& t, const Tensor<T>& g,
                                    std::span<const bool> needs, std::span<Tensor<T>> gin) {
                          if (needs[0]) gin[0] = leaky_relu_backward(t.value(ix), g, slope);
                        });
}

template <typename T>
Var<T> pixel_shuffle(Var<T> x, std::size_t r) {
  return x.tape->record(pixel_shuffle_forward(x.value(), r), {x.id},
                        [r](const Tape<T>&, const Tensor<T>& g, std::span<const bool> needs,
                            std::span<Tensor<T>> gin) {
                          if (needs[0]) gin[0] = pixel_unshuffle_forward(g, r);
                        });
}

#define MDBN_INSTANTIATE(T)                                                                \
  template Conv2dParams<T> init_conv(std::size_t, std::size_t, std::size_t, std::uint64_t); \
  template Tensor<T> gelu_forward(const Tensor<T>&);                                       \
  template Tensor<T> gelu_backward(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> leaky_relu_forward(const Tensor<T>&, double);                         \
  template Tensor<T> leaky_relu_backward(const Tensor<T>&, const Tensor<T>&, double);      \
  template Tensor<T> pixel_shuffle_forward(const Tensor<T>&, std::size_t);                 \
  template Tensor<T> pixel_unshuffle_forward(const Tensor<T>&, std::size_t);               \
  template Var<T> gelu(Var<T>);                                                            \
  template Var<T> leaky_relu(Var<T>, double);                                              \
  template Var<T> pixel_shuffle(Var<T>, std::size_t);

MDBN_INSTANTIATE(float)
MDBN_INSTANTIATE(double)

#undef MDBN_INSTANTIATE

}  // namespace mdbn
