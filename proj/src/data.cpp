#include "mdbn/data.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <numeric>

#include "mdbn/image.hpp"

namespace mdbn {

namespace {

constexpr std::uint32_t kPatchTag = 0x70617463;
constexpr std::uint32_t kEpochTag = 0x65706f63;

}  // namespace

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    tag};
  return std::mt19937_64(seq);
}

std::vector<std::filesystem::path> build_manifest(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const fs::directory_entry& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void write_manifest(const std::filesystem::path& file,
                    const std::vector<std::filesystem::path>& entries) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write manifest " + file.string());
  for (const auto& p : entries) out << p.string() << "\n";
}

std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot read manifest " + file.string());
  std::vector<std::filesystem::path> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    out.emplace_back(line);
  }
  return out;
}

ImagePair make_pair(const std::string& id, const ImageBuffer& hr, std::size_t scale) {
  ImageBuffer img = hr;
  if (img.planes == 1) img = gray_to_rgb(img);
  const ImageBuffer cropped = crop_to_multiple(img, scale);
  ImagePair pair;
  pair.id = id;
  pair.scale = scale;
  pair.hr = image_to_tensor(cropped);
  pair.lr = image_to_tensor(degrade(cropped, scale));
  return pair;
}

std::vector<ImagePair> load_pairs(const std::vector<std::filesystem::path>& manifest,
                                  std::size_t scale) {
  if (manifest.empty()) throw DataError("dataset manifest is empty");
  std::vector<ImagePair> pairs;
  pairs.reserve(manifest.size());
  for (const auto& path : manifest) {
    ImageBuffer img = png_read(path);
    if (img.planes == 1) {
      std::cerr << "warning: " << path.string() << " is grayscale; expanding to RGB\n";
      img = gray_to_rgb(img);
    }
    pairs.push_back(make_pair(path.filename().string(), img, scale));
  }
  return pairs;
}

PairedSample extract_patch(const ImagePair& pair, std::size_t patch, std::size_t x, std::size_t y) {
  const std::size_t lh = pair.lr.dim(1);
  const std::size_t lw = pair.lr.dim(2);
  if (patch == 0 || x + patch > lw || y + patch > lh) {
    throw DataError("patch window out of range for image " + pair.id);
  }
  const std::size_t r = pair.scale;
  const std::size_t hh = pair.hr.dim(1);
  const std::size_t hw = pair.hr.dim(2);
  PairedSample s;
  s.source = pair.id;
  s.lr_x = x;
  s.lr_y = y;
  s.lr = Tensor<float>({3, patch, patch});
  s.hr = Tensor<float>({3, r * patch, r * patch});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < patch; ++i) {
      const float* src = pair.lr.raw() + (c * lh + y + i) * lw + x;
      std::copy(src, src + patch, s.lr.raw() + (c * patch + i) * patch);
    }
    const std::size_t hp = r * patch;
    for (std::size_t i = 0; i < hp; ++i) {
      const float* src = pair.hr.raw() + (c * hh + r * y + i) * hw + r * x;
      std::copy(src, src + hp, s.hr.raw() + (c * hp + i) * hp);
    }
  }
  return s;
}

PairedSample sample_patch(const ImagePair& pair, std::size_t patch, std::mt19937_64& rng) {
  const std::size_t lh = pair.lr.dim(1);
  const std::size_t lw = pair.lr.dim(2);
  if (lh < patch || lw < patch) {
    throw DataError("image " + pair.id + " (LR " + std::to_string(lw) + "x" + std::to_string(lh) +
                    ") is smaller than the patch size " + std::to_string(patch));
  }
  std::uniform_int_distribution<std::size_t> dx(0, lw - patch);
  std::uniform_int_distribution<std::size_t> dy(0, lh - patch);
  const std::size_t x = dx(rng);
  const std::size_t y = dy(rng);
  return extract_patch(pair, patch, x, y);
}

AugmentParams draw_augment(std::mt19937_64& rng) {
  std::uniform_int_distribution<unsigned> coin(0, 1);
  std::uniform_int_distribution<unsigned> quarter(0, 3);
  AugmentParams p;
  p.flip = coin(rng) == 1;
  p.rotation = quarter(rng);
  return p;
}

Tensor<float> transform_chw(const Tensor<float>& t, AugmentParams params) {
  if (t.rank() != 3) throw ShapeError("transform_chw expects [C, H, W], got " + shape_to_string(t.shape()));
  const std::size_t c = t.dim(0);
  const std::size_t h = t.dim(1);
  const std::size_t w = t.dim(2);
  const unsigned k = params.rotation % 4;
  if (k % 2 == 1 && h != w) {
    throw DataError("odd quarter-turn rotation requires a square patch, got " +
                    std::to_string(w) + "x" + std::to_string(h));
  }
  Tensor<float> out(t.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* src = t.raw() + ch * h * w;
    float* dst = out.raw() + ch * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        // Source coordinate after the flip.
        const std::size_t fx = params.flip ? w - 1 - x : x;
        // Counter-clockwise rotation by k quarter turns.
        std::size_t oy = y;
        std::size_t ox = fx;
        switch (k) {
          case 1: oy = w - 1 - fx; ox = y; break;
          case 2: oy = h - 1 - y; ox = w - 1 - fx; break;
          case 3: oy = fx; ox = h - 1 - y; break;
          default: break;
        }
        dst[oy * w + ox] = src[y * w + x];
      }
    }
  }
  return out;
}

PairedSample apply_augment(const PairedSample& s, AugmentParams params) {
  PairedSample out;
  out.source = s.source;
  out.lr_x = s.lr_x;
  out.lr_y = s.lr_y;
  out.lr = transform_chw(s.lr, params);
  out.hr = transform_chw(s.hr, params);
  return out;
}

PairedSample augment(const PairedSample& s, std::mt19937_64& rng) {
  return apply_augment(s, draw_augment(rng));
}

Batch make_batch(std::span<const PairedSample> samples) {
  if (samples.empty()) throw DataError("make_batch: no samples");
  const Shape lr_shape = samples[0].lr.shape();
  const Shape hr_shape = samples[0].hr.shape();
  for (const PairedSample& s : samples) {
    if (s.lr.shape() != lr_shape || s.hr.shape() != hr_shape) {
      throw DataError("make_batch: mixed patch sizes (" + shape_to_string(lr_shape) + " vs " +
                      shape_to_string(s.lr.shape()) + ")");
    }
  }
  auto stack = [&](const Shape& item, auto member) {
    Shape shape{samples.size()};
    shape.insert(shape.end(), item.begin(), item.end());
    Tensor<float> out(shape);
    const std::size_t n = shape_numel(item);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const Tensor<float>& t = samples[i].*member;
      std::copy(t.raw(), t.raw() + n, out.raw() + i * n);
    }
    return out;
  };
  return Batch{stack(lr_shape, &PairedSample::lr), stack(hr_shape, &PairedSample::hr)};
}

BatchSampler::BatchSampler(const std::vector<ImagePair>& pairs, SamplerConfig config)
    : pairs_(pairs), config_(config) {
  if (pairs_.empty()) throw DataError("dataset is empty");
  if (config_.batch == 0 || config_.patch == 0) throw DataError("batch and patch must be positive");
  for (const ImagePair& p : pairs_) {
    if (p.lr.dim(1) < config_.patch || p.lr.dim(2) < config_.patch) {
      throw DataError("image " + p.id + " is smaller than the patch size " +
                      std::to_string(config_.patch));
    }
  }
}

std::vector<std::size_t> BatchSampler::epoch_order(std::uint64_t epoch) const {
  std::vector<std::size_t> order(pairs_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng = stream_rng(config_.seed, epoch, kEpochTag);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

Batch BatchSampler::batch_at(std::uint64_t iter) const {
  std::vector<PairedSample> samples;
  samples.reserve(config_.batch);
  const std::uint64_t n = pairs_.size();
  std::uint64_t cached_epoch = ~std::uint64_t{0};
  std::vector<std::size_t> order;
  for (std::size_t j = 0; j < config_.batch; ++j) {
    const std::uint64_t g = iter * config_.batch + j;
    const std::uint64_t epoch = g / n;
    if (epoch != cached_epoch) {
      order = epoch_order(epoch);
      cached_epoch = epoch;
    }
    const ImagePair& pair = pairs_[order[g % n]];
    std::mt19937_64 rng = stream_rng(config_.seed, g, kPatchTag);
    PairedSample s = sample_patch(pair, config_.patch, rng);
    if (config_.augment) s = augment(s, rng);
    samples.push_back(std::move(s));
  }
  return make_batch(samples);
}

Prefetcher::Prefetcher(const BatchSampler& sampler, std::uint64_t first, std::uint64_t last,
                       std::size_t capacity)
    : sampler_(sampler), next_iter_(first), last_(last), capacity_(std::max<std::size_t>(1, capacity)) {
  worker_ = std::thread([this] { run(); });
}

Prefetcher::~Prefetcher() {
  {
    std::lock_guard lock(mutex_);
    stop_ = true;
  }
  cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

void Prefetcher::run() {
  try {
    for (std::uint64_t it = next_iter_; it < last_; ++it) {
      Batch b = sampler_.batch_at(it);
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [&] { return stop_ || queue_.size() < capacity_; });
      if (stop_) return;
      queue_.push_back(std::move(b));
      cv_.notify_all();
    }
  } catch (...) {
    std::lock_guard lock(mutex_);
    error_ = std::current_exception();
  }
  std::lock_guard lock(mutex_);
  finished_ = true;
  cv_.notify_all();
}

Batch Prefetcher::next() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [&] { return !queue_.empty() || finished_; });
  if (queue_.empty()) {
    if (error_) std::rethrow_exception(error_);
    throw DataError("prefetcher exhausted");
  }
  Batch b = std::move(queue_.front());
  queue_.pop_front();
  cv_.notify_all();
  return b;
}

}  // namespace mdbn
