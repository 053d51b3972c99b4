#include "mdbn/autograd.hpp"

#include <cmath>
#include <cstdint>

namespace mdbn {

namespace {

constexpr std::int64_t kParallelThreshold = 1 << 15;

template <typename T, typename F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, F f) {
  Tensor<T> out(a.shape());
  const T* pa = a.raw();
  const T* pb = b.raw();
  T* po = out.raw();
  const auto n = static_cast<std::int64_t>(a.numel());
#pragma omp parallel for simd if (n > kParallelThreshold)
  for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
  return out;
}

}  // namespace

template <typename T>
Tensor<T> add_values(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  return zip(a, b, [](T x, T y) { return x + y; });
}

template <typename T>
double mean_abs_error_value(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mean_abs_error");
  if (a.empty()) throw ShapeError("mean_abs_error of empty tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    acc += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  }
  return acc / static_cast<double>(a.numel());
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  return tape.record(add_values(a.value(), b.value()), {a.id, b.id},
                     [](const Tape<T>&, const Tensor<T>& g, std::span<const bool> needs,
                        std::span<Tensor<T>> gin) {
                       if (needs[0]) gin[0] = g;
                       if (needs[1]) gin[1] = g;
                     });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tape<T>& tape = *a.tape;
  return tape.record(zip(a.value(), b.value(), [](T x, T y) { return x - y; }), {a.id, b.id},
                     [](const Tape<T>&, const Tensor<T>& g, std::span<const bool> needs,
                        std::span<Tensor<T>> gin) {
                       if (needs[0]) gin[0] = g;
                       if (needs[1]) {
                         Tensor<T> n = g;
                         for (T& v : n.data()) v = -v;
                         gin[1] = std::move(n);
                       }
                     });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tape<T>& tape = *a.tape;
  const std::size_t ia = a.id;
  const std::size_t ib = b.id;
  return tape.record(zip(a.value(), b.value(), [](T x, T y) { return x * y; }), {ia, ib},
                     [ia, ib](const Tape<T>& t, const Tensor<T>& g, std::span<const bool> needs,
                              std::span<Tensor<T>> gin) {
                       auto times = [](T x, T y) { return x * y; };
                       if (needs[0]) gin[0] = zip(g, t.value(ib), times);
                       if (needs[1]) gin[1] = zip(g, t.value(ia), times);
                     });
}

template <typename T>
Var<T> sum(Var<T> a) {
  Tape<T>& tape = *a.tape;
  Shape in_shape = a.shape();
  return tape.record(Tensor<T>::scalar(static_cast<T>(sum_f64(a.value()))), {a.id},
                     [in_shape](const Tape<T>&, const Tensor<T>& g, std::span<const bool> needs,
                                std::span<Tensor<T>> gin) {
                       if (needs[0]) gin[0] = Tensor<T>(in_shape, g[0]);
                     });
}

template <typename T>
Var<T> mean_abs_error(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  const double loss = mean_abs_error_value(a.value(), b.value());
  const std::size_t ia = a.id;
  const std::size_t ib = b.id;
  return tape.record(
      Tensor<T>::scalar(static_cast<T>(loss)), {ia, ib},
      [ia, ib](const Tape<T>& t, const Tensor<T>& g, std::span<const bool> needs,
               std::span<Tensor<T>> gin) {
        const Tensor<T>& va = t.value(ia);
        const Tensor<T>& vb = t.value(ib);
        const T scale = g[0] / static_cast<T>(va.numel());
        Tensor<T> ga = zip(va, vb, [scale](T x, T y) {
          return x > y ? scale : (x < y ? -scale : T{0});
        });
        if (needs[1]) {
          Tensor<T> gb = ga;
          for (T& v : gb.data()) v = -v;
          gin[1] = std::move(gb);
        }
        if (needs[0]) gin[0] = std::move(ga);
      });
}

#define MDBN_INSTANTIATE(T)                                                  \
  template Tensor<T> add_values(const Tensor<T>&, const Tensor<T>&);         \
  template double mean_abs_error_value(const Tensor<T>&, const Tensor<T>&);  \
  template Var<T> add(Var<T>, Var<T>);                                       \
  template Var<T> sub(Var<T>, Var<T>);                                       \
  template Var<T> mul(Var<T>, Var<T>);                                       \
  template Var<T> sum(Var<T>);                                               \
  template Var<T> mean_abs_error(Var<T>, Var<T>);

MDBN_INSTANTIATE(float)
MDBN_INSTANTIATE(double)

#undef MDBN_INSTANTIATE

}  // namespace mdbn
