#include <gtest/gtest.h>

#include <random>

#include "mdbn/model.hpp"
#include "test_util.hpp"

using namespace mdbn;
using mdbn::testing::grad_check;
using mdbn::testing::random_tensor;

namespace {

ModelConfig small_config(std::uint32_t scale = 2) {
  ModelConfig c;
  c.scale = scale;
  c.channels = 4;
  c.n_rmdb = 3;
  c.mdbm_per_rmdb = 2;
  c.seed = 5;
  return c;
}

template <typename T>
void zero(Conv2dParams<T>& p) {
  p.weight.fill(T{0});
  p.bias.fill(T{0});
}

template <typename T>
void zero_blocks(Model<T>& m) {
  for (auto& block : m.blocks) {
    for (Mdbm<T>& mb : block) {
      zero(mb.hf1);
      if (mb.hf2) zero(*mb.hf2);
      zero(mb.lf);
    }
  }
}

}  // namespace

TEST(ParamCount, DegenerateHandCount) {
  ModelConfig c;
  c.scale = 1;
  c.channels = 1;
  c.n_rmdb = 1;
  c.mdbm_per_rmdb = 1;
  EXPECT_EQ(param_count(c), 88u);
  EXPECT_EQ(Model<float>(c).parameter_tally(), 88u);
}

TEST(ParamCount, MatchesTallyOnRandomConfigs) {
  std::mt19937 rng(2024);
  for (int i = 0; i < 12; ++i) {
    ModelConfig c;
    c.scale = 1 + rng() % 4;
    c.channels = 1 + rng() % 24;
    c.n_rmdb = rng() % 5;
    c.mdbm_per_rmdb = 1 + rng() % 2;
    c.hf_branch = rng() % 2 ? HfBranch::two_3x3 : HfBranch::single_5x5;
    c.activation = rng() % 2 ? Activation::gelu : Activation::leaky_relu;
    EXPECT_EQ(param_count(c), Model<float>(c).parameter_tally())
        << "scale " << c.scale << " C " << c.channels << " rmdb " << c.n_rmdb;
  }
  ModelConfig full;
  EXPECT_EQ(param_count(full), Model<float>(full).parameter_tally());
}

TEST(ParamCount, VariantHasMoreParameters) {
  for (std::uint32_t c : {4u, 16u, 64u}) {
    ModelConfig a;
    a.channels = c;
    ModelConfig b = a;
    b.hf_branch = HfBranch::single_5x5;
    EXPECT_GT(param_count(b), param_count(a));
  }
  ModelConfig a;
  a.channels = 8;
  ModelConfig b = a;
  b.channels = 16;
  const double ratio = static_cast<double>(param_count(b)) / static_cast<double>(param_count(a));
  EXPECT_GT(ratio, 3.5);
}

TEST(ParamCount, ShallowVariantKeepsModuleCount) {
  ModelConfig a;
  ModelConfig b;
  b.n_rmdb = 12;
  b.mdbm_per_rmdb = 1;
  EXPECT_EQ(param_count(a), param_count(b));
}

TEST(Config, RejectsInvalid) {
  ModelConfig c;
  c.scale = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.scale = 2;
  c.channels = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.channels = 4;
  c.mdbm_per_rmdb = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_THROW(hf_branch_from_string("three"), std::invalid_argument);
  EXPECT_THROW(activation_from_string("relu"), std::invalid_argument);
}

TEST(Model, OutputShapePerScale) {
  for (std::uint32_t s : {2u, 3u, 4u}) {
    Model<float> m(small_config(s));
    const auto y = infer(m, random_tensor<float>({1, 3, 24, 16}, s, 0.0, 1.0));
    EXPECT_EQ(y.shape(), (Shape{1, 3, 24 * s, 16 * s}));
  }
}

TEST(Model, InputValidation) {
  Model<float> m(small_config());
  EXPECT_THROW(infer(m, Tensor<float>({1, 1, 16, 16})), ShapeError);
  EXPECT_THROW(infer(m, Tensor<float>({3, 16, 16})), ShapeError);
  EXPECT_THROW(infer(m, Tensor<float>({1, 3, 7, 16})), ShapeError);
}

TEST(Model, ZeroBlocksMakeRmdbIdentity) {
  Model<double> m(small_config());
  zero_blocks(m);
  const auto x = random_tensor<double>({2, 4, 7, 5}, 3);
  EagerContext<double> ctx;
  for (std::size_t b = 0; b < m.blocks.size(); ++b) {
    EXPECT_TRUE(rmdb_forward(ctx, m.blocks[b], Activation::gelu, x) == x);
    EXPECT_TRUE(rmdb_forward(ctx, m.blocks[b], Activation::leaky_relu, x) == x);
  }
  const auto y = mdbm_forward(ctx, m.blocks[0][0], Activation::gelu, x);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Model, RmdbAddsInnerChain) {
  Model<double> m(small_config());
  const auto x = random_tensor<double>({1, 4, 6, 6}, 8);
  EagerContext<double> ctx;
  const auto inner = mdbm_forward(ctx, m.blocks[1][1], Activation::gelu,
                                  mdbm_forward(ctx, m.blocks[1][0], Activation::gelu, x));
  const auto out = rmdb_forward(ctx, m.blocks[1], Activation::gelu, x);
  EXPECT_TRUE(out == add_values(x, inner));
}

TEST(Model, GlobalResidualWithZeroBlocks) {
  // Zero blocks make every RMDB the identity, so the deep features equal the
  // head features and the upsampler sees twice the head output.
  Model<double> m(small_config(2));
  zero_blocks(m);
  const auto x = random_tensor<double>({1, 3, 9, 8}, 4, 0.0, 1.0);
  EagerContext<double> ctx;
  const auto head = ctx.conv(x, m.head);
  auto feat = add_values(head, head);
  for (const auto& stage : m.upsampler) feat = ctx.shuffle(ctx.conv(feat, stage.conv), stage.factor);
  const auto expect = ctx.conv(feat, m.tail);
  EXPECT_TRUE(infer(m, x) == expect);
}

TEST(Model, ZeroEverythingGivesZeroImage) {
  Model<float> m(small_config(4));
  for (auto& p : m.parameters()) p.value->fill(0.0f);
  const auto y = infer(m, random_tensor<float>({1, 3, 8, 8}, 1, 0.0, 1.0));
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Model, DeterministicForSeed) {
  Model<float> a(small_config());
  Model<float> b(small_config());
  const auto x = random_tensor<float>({1, 3, 12, 10}, 2, 0.0, 1.0);
  EXPECT_TRUE(infer(a, x) == infer(b, x));
  ModelConfig other = small_config();
  other.seed = 6;
  EXPECT_FALSE(infer(Model<float>(other), x) == infer(a, x));
}

TEST(Model, TapsDoNotChangeOutput) {
  ModelConfig c = small_config();
  Model<float> m(c);
  const auto x = random_tensor<float>({2, 3, 10, 9}, 9, 0.0, 1.0);
  std::vector<FeatureTapRecord<float>> taps;
  const auto with = infer(m, x, default_conv_algorithm(), {TapSite{2, 1}, TapSite{0, 0}}, &taps);
  EXPECT_TRUE(with == infer(m, x));
  ASSERT_EQ(taps.size(), 2u);
  for (const auto& t : taps) {
    EXPECT_EQ(t.f_hf.shape(), (Shape{2, c.channels, 10, 9}));
    EXPECT_EQ(t.f_lf.shape(), t.f_hf.shape());
    EXPECT_EQ(t.f_output.shape(), t.f_hf.shape());
  }
}

TEST(Model, TapSiteValidation) {
  Model<float> m(small_config());
  EXPECT_NO_THROW(m.validate_tap_site(TapSite{}));
  try {
    m.validate_tap_site(TapSite{3, 0});
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("2:1"), std::string::npos);
  }
  EXPECT_EQ(parse_tap_site("2:1"), (TapSite{2, 1}));
  EXPECT_THROW(parse_tap_site("2"), std::invalid_argument);
  EXPECT_THROW(parse_tap_site("a:1"), std::invalid_argument);
}

TEST(Model, ConvAlgorithmsAgree) {
  Model<float> m(small_config(3));
  const auto x = random_tensor<float>({1, 3, 11, 13}, 12, 0.0, 1.0);
  const auto a = infer(m, x, ConvAlgorithm::direct);
  const auto b = infer(m, x, ConvAlgorithm::im2col);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-5);
}

TEST(Model, CastRoundTrip) {
  Model<float> m(small_config());
  const Model<float> back = m.cast<double>().cast<float>();
  auto pa = m.parameters();
  auto pb = back.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(*pa[i].value == *pb[i].value);
}

TEST(Gradcheck, MdbmWithMae) {
  for (int seed = 0; seed < 10; ++seed) {
    for (HfBranch branch : {HfBranch::two_3x3, HfBranch::single_5x5}) {
      ModelConfig c = small_config();
      c.hf_branch = branch;
      c.seed = seed;
      const Model<double> m(c);
      const auto x = random_tensor<double>({1, 4, 6, 6}, 500 + seed);
      const auto target = random_tensor<double>({1, 4, 6, 6}, 600 + seed);
      const Mdbm<double>& blk = m.blocks[0][0];
      std::vector<Tensor<double>> inputs = {x, blk.hf1.weight, blk.hf1.bias, blk.lf.weight, blk.lf.bias};
      if (blk.hf2) {
        inputs.push_back(blk.hf2->weight);
        inputs.push_back(blk.hf2->bias);
      }
      auto build = [&](Tape<double>& tape, const std::vector<Var<double>>& v) {
        Var<double> hf = conv2d(v[0], v[1], v[2]);
        if (v.size() > 5) hf = conv2d(gelu(hf), v[5], v[6]);
        Var<double> out = gelu(add(hf, conv2d(v[0], v[3], v[4])));
        return mean_abs_error(out, tape.constant(target));
      };
      EXPECT_LT(grad_check(build, inputs).worst_relative, 1e-4) << "seed " << seed;
    }
  }
}

TEST(Gradcheck, TapeContextMatchesFiniteDifferences) {
  // Full network on the tape: compare parameter gradients with central
  // differences on a sample of weights.
  for (int seed = 0; seed < 10; ++seed) {
    ModelConfig c = small_config(seed % 2 == 0 ? 2 : 3);
    c.n_rmdb = 2;
    c.seed = seed;
    c.activation = seed % 3 == 0 ? Activation::leaky_relu : Activation::gelu;
    Model<double> m(c);
    const auto x = random_tensor<double>({1, 3, 8, 8}, 700 + seed, 0.0, 1.0);
    const auto y = random_tensor<double>({1, 3, 8 * c.scale, 8 * c.scale}, 800 + seed, 0.0, 1.0);
    auto loss_of = [&](const Model<double>& model) {
      return mean_abs_error_value(infer(model, x), y);
    };
    Tape<double> tape;
    TapeContext<double> ctx(tape);
    Var<double> loss = mean_abs_error(mdbn_forward(ctx, m, x), tape.constant(y));
    tape.backward(loss);
    double diff2 = 0.0;
    double norm2 = 0.0;
    std::mt19937 pick(seed);
    for (auto& p : m.parameters()) {
      const Tensor<double>* g = ctx.grad(*p.value);
      ASSERT_NE(g, nullptr) << p.name;
      for (int probe = 0; probe < 3; ++probe) {
        const std::size_t i = pick() % p.value->numel();
        const double saved = (*p.value)[i];
        (*p.value)[i] = saved + 1e-6;
        const double up = loss_of(m);
        (*p.value)[i] = saved - 1e-6;
        const double down = loss_of(m);
        (*p.value)[i] = saved;
        const double numeric = (up - down) / 2e-6;
        diff2 += (numeric - (*g)[i]) * (numeric - (*g)[i]);
        norm2 += numeric * numeric + (*g)[i] * (*g)[i];
      }
    }
    EXPECT_LT(std::sqrt(diff2 / norm2), 1e-4) << "seed " << seed;
  }
}
