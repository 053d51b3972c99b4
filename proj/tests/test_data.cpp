#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "mdbn/data.hpp"
#include "test_util.hpp"

using namespace mdbn;
namespace fs = std::filesystem;

namespace {

// HR is the nearest-neighbour enlargement of LR, so every LR pixel owns an
// r x r block of identical HR pixels.
ImagePair block_pair(std::size_t lw, std::size_t lh, std::size_t r, std::uint64_t seed) {
  ImagePair p;
  p.id = "block" + std::to_string(seed);
  p.scale = r;
  p.lr = mdbn::testing::random_tensor<float>({3, lh, lw}, seed, 0.0, 1.0);
  p.hr = Tensor<float>({3, lh * r, lw * r});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < lh * r; ++y) {
      for (std::size_t x = 0; x < lw * r; ++x) {
        p.hr[(c * lh * r + y) * lw * r + x] = p.lr[(c * lh + y / r) * lw + x / r];
      }
    }
  }
  return p;
}

ImagePair constant_pair(float v, std::size_t lw, std::size_t r) {
  ImagePair p;
  p.id = "const" + std::to_string(v);
  p.scale = r;
  p.lr = Tensor<float>({3, lw, lw}, v);
  p.hr = Tensor<float>({3, lw * r, lw * r}, v);
  return p;
}

// numpy.rot90 (k = 1) in gather form: out[i][j] = in[j][w - 1 - i].
Tensor<float> rot90_oracle(const Tensor<float>& t) {
  const std::size_t c = t.dim(0), n = t.dim(1);
  Tensor<float> out(t.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) out[(ch * n + i) * n + j] = t[(ch * n + j) * n + n - 1 - i];
    }
  }
  return out;
}

Tensor<float> fliplr_oracle(const Tensor<float>& t) {
  const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  Tensor<float> out(t.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) out[(ch * h + y) * w + x] = t[(ch * h + y) * w + w - 1 - x];
    }
  }
  return out;
}

bool blocks_consistent(const PairedSample& s, std::size_t r) {
  const std::size_t p = s.lr.dim(1);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < p * r; ++y) {
      for (std::size_t x = 0; x < p * r; ++x) {
        if (s.hr[(c * p * r + y) * p * r + x] != s.lr[(c * p + y / r) * p + x / r]) return false;
      }
    }
  }
  return true;
}

}  // namespace

TEST(Manifest, BuildWriteRead) {
  const fs::path dir = fs::temp_directory_path() / "mdbn_test_manifest";
  fs::remove_all(dir);
  fs::create_directories(dir);
  for (const char* n : {"b.png", "a.png", "c.txt", "d.png"}) std::ofstream(dir / n) << "x";
  const auto m = build_manifest(dir);
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m[0].filename(), "a.png");
  EXPECT_EQ(m[2].filename(), "d.png");
  write_manifest(dir / "list.txt", m);
  {
    std::ofstream extra(dir / "list.txt", std::ios::app);
    extra << "\n# comment\n";
  }
  EXPECT_EQ(read_manifest(dir / "list.txt"), m);
  EXPECT_THROW(build_manifest(dir / "nope"), DataError);
  EXPECT_THROW(read_manifest(dir / "nope.txt"), DataError);
}

TEST(Pairs, MakePairCropsAndDegrades) {
  const ImageBuffer hr = mdbn::testing::random_rgb(50, 41, 3);
  const ImagePair p = make_pair("x", hr, 3);
  EXPECT_EQ(p.hr.shape(), (Shape{3, 39, 48}));
  EXPECT_EQ(p.lr.shape(), (Shape{3, 13, 16}));
  const ImageBuffer lr = degrade(hr, 3);
  for (std::size_t i = 0; i < p.lr.numel(); ++i) EXPECT_EQ(p.lr[i], static_cast<float>(lr.data[i] / 255.0));
}

TEST(Patches, ExtractMatchesSourceWindows) {
  const ImagePair p = block_pair(20, 17, 2, 1);
  std::mt19937_64 rng(42);
  for (int k = 0; k < 100; ++k) {
    const PairedSample s = sample_patch(p, 8, rng);
    ASSERT_LE(s.lr_x + 8, 20u);
    ASSERT_LE(s.lr_y + 8, 17u);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < 8; ++y) {
        for (std::size_t x = 0; x < 8; ++x) {
          ASSERT_EQ(s.lr[(c * 8 + y) * 8 + x], p.lr[(c * 17 + s.lr_y + y) * 20 + s.lr_x + x]);
        }
      }
      for (std::size_t y = 0; y < 16; ++y) {
        for (std::size_t x = 0; x < 16; ++x) {
          ASSERT_EQ(s.hr[(c * 16 + y) * 16 + x], p.hr[(c * 34 + 2 * s.lr_y + y) * 40 + 2 * s.lr_x + x]);
        }
      }
    }
    EXPECT_TRUE(blocks_consistent(s, 2));
  }
}

TEST(Patches, PositionsCoverTheRange) {
  const ImagePair p = block_pair(12, 12, 2, 2);
  std::mt19937_64 rng(7);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (int k = 0; k < 400; ++k) {
    const PairedSample s = sample_patch(p, 10, rng);
    seen.insert({s.lr_x, s.lr_y});
  }
  EXPECT_EQ(seen.size(), 9u);
}

TEST(Patches, TooSmallNamesImage) {
  const ImagePair p = block_pair(6, 6, 2, 3);
  std::mt19937_64 rng(0);
  try {
    sample_patch(p, 8, rng);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(p.id), std::string::npos);
  }
  EXPECT_THROW(extract_patch(p, 4, 3, 0), DataError);
}

TEST(Augment, MatchesNumpyConventions) {
  const Tensor<float> t = mdbn::testing::random_tensor<float>({2, 5, 5}, 9);
  EXPECT_EQ(transform_chw(t, {}), t);
  EXPECT_EQ(transform_chw(t, {true, 0}), fliplr_oracle(t));
  Tensor<float> expect = t;
  for (unsigned k = 1; k < 4; ++k) {
    expect = rot90_oracle(expect);
    EXPECT_EQ(transform_chw(t, {false, k}), expect) << k;
    EXPECT_EQ(transform_chw(t, {true, k}), transform_chw(fliplr_oracle(t), {false, k}));
  }
}

TEST(Augment, GroupProperties) {
  const Tensor<float> t = mdbn::testing::random_tensor<float>({3, 6, 6}, 10);
  std::vector<float> sorted_in(t.data().begin(), t.data().end());
  std::sort(sorted_in.begin(), sorted_in.end());
  std::set<std::vector<float>> distinct;
  for (bool flip : {false, true}) {
    for (unsigned k = 0; k < 4; ++k) {
      const Tensor<float> a = transform_chw(t, {flip, k});
      std::vector<float> sorted_out(a.data().begin(), a.data().end());
      std::sort(sorted_out.begin(), sorted_out.end());
      EXPECT_EQ(sorted_out, sorted_in);
      distinct.insert(std::vector<float>(a.data().begin(), a.data().end()));
    }
  }
  EXPECT_EQ(distinct.size(), 8u);
  // Flip is an involution; four quarter turns are the identity.
  EXPECT_EQ(transform_chw(transform_chw(t, {true, 0}), {true, 0}), t);
  Tensor<float> r = t;
  for (int i = 0; i < 4; ++i) r = transform_chw(r, {false, 1});
  EXPECT_EQ(r, t);
  EXPECT_EQ(transform_chw(t, {false, 5}), transform_chw(t, {false, 1}));
}

TEST(Augment, PreservesLrHrFootprint) {
  const ImagePair p = block_pair(16, 16, 3, 4);
  const PairedSample s = extract_patch(p, 6, 5, 2);
  for (bool flip : {false, true}) {
    for (unsigned k = 0; k < 4; ++k) EXPECT_TRUE(blocks_consistent(apply_augment(s, {flip, k}), 3));
  }
}

TEST(Augment, NonSquareOddRotationRejected) {
  const Tensor<float> t({3, 4, 6});
  EXPECT_THROW(transform_chw(t, {false, 1}), DataError);
  EXPECT_THROW(transform_chw(t, {true, 3}), DataError);
  EXPECT_NO_THROW(transform_chw(t, {true, 2}));
  EXPECT_THROW(transform_chw(Tensor<float>({4, 6}), {}), ShapeError);
}

TEST(Batching, StacksAndRejectsMixedSizes) {
  const ImagePair p = block_pair(16, 16, 2, 5);
  std::vector<PairedSample> s = {extract_patch(p, 4, 0, 0), extract_patch(p, 4, 3, 7)};
  const Batch b = make_batch(s);
  EXPECT_EQ(b.lr.shape(), (Shape{2, 3, 4, 4}));
  EXPECT_EQ(b.hr.shape(), (Shape{2, 3, 8, 8}));
  EXPECT_TRUE(std::equal(s[1].hr.data().begin(), s[1].hr.data().end(), b.hr.data().begin() + 3 * 64));
  s.push_back(extract_patch(p, 5, 0, 0));
  EXPECT_THROW(make_batch(s), DataError);
  EXPECT_THROW(make_batch({}), DataError);
}

TEST(Sampler, DeterministicPerIteration) {
  std::vector<ImagePair> pairs = {block_pair(20, 20, 2, 1), block_pair(24, 18, 2, 2), block_pair(16, 16, 2, 3)};
  const BatchSampler a(pairs, {8, 4, true, 11});
  const BatchSampler b(pairs, {8, 4, true, 11});
  const BatchSampler c(pairs, {8, 4, true, 12});
  for (std::uint64_t it : {0u, 1u, 7u, 100u}) {
    const Batch x = a.batch_at(it);
    EXPECT_EQ(x.lr, b.batch_at(it).lr);
    EXPECT_EQ(x.hr, b.batch_at(it).hr);
    EXPECT_NE(x.lr, c.batch_at(it).lr);
  }
  // Order of queries does not matter.
  const Batch late = a.batch_at(50);
  a.batch_at(3);
  EXPECT_EQ(late.lr, a.batch_at(50).lr);
  EXPECT_NE(a.batch_at(0).lr, a.batch_at(1).lr);
}

TEST(Sampler, EachEpochVisitsEveryImageOnce) {
  std::vector<ImagePair> pairs;
  for (int i = 0; i < 5; ++i) pairs.push_back(constant_pair(static_cast<float>(i) / 8.0f, 8, 2));
  const BatchSampler s(pairs, {4, 1, false, 3});
  for (std::uint64_t epoch = 0; epoch < 4; ++epoch) {
    auto order = s.epoch_order(epoch);
    std::set<std::size_t> ids(order.begin(), order.end());
    EXPECT_EQ(ids.size(), 5u);
    for (std::size_t j = 0; j < 5; ++j) {
      const Batch b = s.batch_at(epoch * 5 + j);
      EXPECT_EQ(b.lr[0], static_cast<float>(order[j]) / 8.0f);
    }
  }
  EXPECT_NE(s.epoch_order(0), s.epoch_order(1));
}

TEST(Sampler, RejectsBadInputs) {
  std::vector<ImagePair> none;
  EXPECT_THROW(BatchSampler(none, {}), DataError);
  std::vector<ImagePair> small = {block_pair(6, 6, 2, 1)};
  EXPECT_THROW(BatchSampler(small, {8, 2, true, 0}), DataError);
  EXPECT_THROW(BatchSampler(small, {4, 0, true, 0}), DataError);
}

TEST(Prefetcher, MatchesSynchronousSampler) {
  std::vector<ImagePair> pairs = {block_pair(20, 20, 2, 1), block_pair(24, 18, 2, 2)};
  const BatchSampler s(pairs, {8, 3, true, 5});
  Prefetcher pf(s, 10, 30, 2);
  for (std::uint64_t it = 10; it < 30; ++it) {
    const Batch b = pf.next();
    EXPECT_EQ(b.lr, s.batch_at(it).lr) << it;
    EXPECT_EQ(b.hr, s.batch_at(it).hr);
  }
  EXPECT_THROW(pf.next(), DataError);
}

TEST(Prefetcher, EarlyDestructionJoinsCleanly) {
  std::vector<ImagePair> pairs = {block_pair(20, 20, 2, 1)};
  const BatchSampler s(pairs, {8, 2, true, 5});
  for (int k = 0; k < 5; ++k) {
    Prefetcher pf(s, 0, 1000, 2);
    pf.next();
  }
  SUCCEED();
}
