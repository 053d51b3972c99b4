#pragma once

#include <condition_variable>
#include <exception>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <mutex>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mdbn/image.hpp"
#include "mdbn/tensor.hpp"

namespace mdbn {

// Sorted list of *.png files directly inside `dir`.
std::vector<std::filesystem::path> build_manifest(const std::filesystem::path& dir);
void write_manifest(const std::filesystem::path& file,
                    const std::vector<std::filesystem::path>& entries);
// One path per line; blank lines and lines starting with '#' are ignored.
std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& file);

// An HR image and its bicubic LR counterpart, both [3, H, W] in [0, 1].
struct ImagePair {
  std::string id;
  std::size_t scale = 2;
  Tensor<float> hr;
  Tensor<float> lr;
};

// Reads each HR file, crops it to a multiple of `scale` and synthesizes the
// LR image. Grayscale files are expanded to RGB.
ImagePair make_pair(const std::string& id, const ImageBuffer& hr, std::size_t scale);
std::vector<ImagePair> load_pairs(const std::vector<std::filesystem::path>& manifest,
                                  std::size_t scale);

struct PairedSample {
  Tensor<float> lr;  // [3, p, p]
  Tensor<float> hr;  // [3, r p, r p]
  std::string source;
  std::size_t lr_x = 0;
  std::size_t lr_y = 0;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Window of `pair` whose LR top-left corner is (x, y).
PairedSample extract_patch(const ImagePair& pair, std::size_t patch, std::size_t x, std::size_t y);
// Uniformly placed LR window of side `patch` and the matching HR window.
PairedSample sample_patch(const ImagePair& pair, std::size_t patch, std::mt19937_64& rng);

struct AugmentParams {
  bool flip = false;      // horizontal, applied first
  unsigned rotation = 0;  // quarter turns counter-clockwise
};

AugmentParams draw_augment(std::mt19937_64& rng);
// Odd rotations of a non-square patch throw.
PairedSample apply_augment(const PairedSample& s, AugmentParams params);
PairedSample augment(const PairedSample& s, std::mt19937_64& rng);
// Single [C, H, W] tensor version used by the patch transforms.
Tensor<float> transform_chw(const Tensor<float>& t, AugmentParams params);

struct Batch {
  Tensor<float> lr;  // [N, 3, p, p]
  Tensor<float> hr;  // [N, 3, r p, r p]
};

Batch make_batch(std::span<const PairedSample> samples);

struct SamplerConfig {
  std::size_t patch = 64;
  std::size_t batch = 16;
  bool augment = true;
  std::uint64_t seed = 0;
};

// Random-access batch source. Batch `iter` depends only on (seed, iter), so a
// resumed run draws exactly the batches an uninterrupted run would. Images are
// visited in a fresh permutation every epoch.
class BatchSampler {
 public:
  BatchSampler(const std::vector<ImagePair>& pairs, SamplerConfig config);

  Batch batch_at(std::uint64_t iter) const;
  std::vector<std::size_t> epoch_order(std::uint64_t epoch) const;
  const SamplerConfig& config() const noexcept { return config_; }

 private:
  const std::vector<ImagePair>& pairs_;
  SamplerConfig config_;
};

// Produces batches [first, last) on a worker thread through a bounded queue.
// Batches are still a pure function of the iteration, so the sequence matches
// the synchronous sampler.
class Prefetcher {
 public:
  Prefetcher(const BatchSampler& sampler, std::uint64_t first, std::uint64_t last,
             std::size_t capacity = 4);
  ~Prefetcher();
  Prefetcher(const Prefetcher&) = delete;
  Prefetcher& operator=(const Prefetcher&) = delete;

  Batch next();

 private:
  void run();

  const BatchSampler& sampler_;
  std::uint64_t next_iter_;
  std::uint64_t last_;
  std::size_t capacity_;
  std::deque<Batch> queue_;
  std::exception_ptr error_;
  bool stop_ = false;
  bool finished_ = false;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::thread worker_;
};

// mt19937_64 seeded from a seed and a stream index.
std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream, std::uint32_t tag);

}  // namespace mdbn
