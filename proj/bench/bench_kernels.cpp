// Convolution kernels: serial direct reference vs the OpenMP im2col/GEMM path,
// plus a whole-model forward. Thread count is the second benchmark argument
// for the parallel path (0 = OpenMP default).

#include <benchmark/benchmark.h>
#include <omp.h>

#include <random>

#include "mdbn/model.hpp"
#include "mdbn/nn_ops.hpp"

namespace {

using mdbn::ConvAlgorithm;
using mdbn::Tensor;

Tensor<float> random_tensor(const mdbn::Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor<float> t(shape);
  for (float& v : t.data()) v = u(rng);
  return t;
}

class ThreadScope {
 public:
  explicit ThreadScope(int threads) : saved_(omp_get_max_threads()) {
    if (threads > 0) omp_set_num_threads(threads);
  }
  ~ThreadScope() { omp_set_num_threads(saved_); }

 private:
  int saved_;
};

void conv_forward(benchmark::State& state, ConvAlgorithm algo) {
  const auto c = static_cast<std::size_t>(state.range(0));
  ThreadScope threads(static_cast<int>(state.range(1)));
  const Tensor<float> x = random_tensor({1, c, 64, 64}, 1);
  const Tensor<float> w = random_tensor({c, c, 3, 3}, 2);
  const Tensor<float> b = random_tensor({c}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(mdbn::conv2d_forward(x, w, b, algo));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(c * c * 9 * 64 * 64));
}

void conv_backward(benchmark::State& state, ConvAlgorithm algo) {
  const auto c = static_cast<std::size_t>(state.range(0));
  ThreadScope threads(static_cast<int>(state.range(1)));
  const Tensor<float> x = random_tensor({1, c, 64, 64}, 1);
  const Tensor<float> w = random_tensor({c, c, 3, 3}, 2);
  const Tensor<float> g = random_tensor({1, c, 64, 64}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(mdbn::conv2d_backward(x, w, g, true, algo));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * c * c * 9 * 64 * 64));
}

void model_forward(benchmark::State& state, ConvAlgorithm algo) {
  ThreadScope threads(static_cast<int>(state.range(1)));
  mdbn::ModelConfig cfg;
  cfg.channels = static_cast<std::uint32_t>(state.range(0));
  cfg.n_rmdb = 2;
  const mdbn::Model<float> model(cfg);
  const Tensor<float> lr = random_tensor({1, 3, 48, 48}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(mdbn::infer(model, lr, algo));
}

}  // namespace

BENCHMARK_CAPTURE(conv_forward, direct, ConvAlgorithm::direct)->Args({16, 1})->Args({64, 1})
    ->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(conv_forward, im2col, ConvAlgorithm::im2col)->ArgsProduct({{16, 64}, {1, 0}})
    ->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(conv_backward, direct, ConvAlgorithm::direct)->Args({16, 1})->Args({64, 1})
    ->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(conv_backward, im2col, ConvAlgorithm::im2col)->ArgsProduct({{16, 64}, {1, 0}})
    ->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(model_forward, direct, ConvAlgorithm::direct)->Args({16, 1})->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(model_forward, im2col, ConvAlgorithm::im2col)->ArgsProduct({{16}, {1, 0}})
    ->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
