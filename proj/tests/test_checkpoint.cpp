#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mdbn/checkpoint.hpp"
#include "mdbn/trainer.hpp"
#include "test_util.hpp"

using namespace mdbn;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny(HfBranch hf = HfBranch::two_3x3) {
  ModelConfig c;
  c.scale = 3;
  c.channels = 4;
  c.n_rmdb = 2;
  c.hf_branch = hf;
  c.activation = Activation::leaky_relu;
  c.seed = 77;
  return c;
}

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const fs::path dir = fs::temp_directory_path() / "mdbn_test_ckpt";
  fs::create_directories(dir);
  for (HfBranch hf : {HfBranch::two_3x3, HfBranch::single_5x5}) {
    const Model<float> m(tiny(hf));
    write_checkpoint(dir / "a.mdbn", checkpoint_from_model(m));
    const Model<float> loaded = model_from_checkpoint(read_checkpoint(dir / "a.mdbn"));
    EXPECT_EQ(loaded.config(), m.config());
    write_checkpoint(dir / "b.mdbn", checkpoint_from_model(loaded));
    EXPECT_EQ(slurp(dir / "a.mdbn"), slurp(dir / "b.mdbn"));

    const Tensor<float> lr = mdbn::testing::random_tensor<float>({1, 3, 9, 10}, 4, 0.0, 1.0);
    EXPECT_EQ(infer(m, lr), infer(loaded, lr));
  }
}

TEST(Checkpoint, EveryParameterStoredOnce) {
  const Model<float> m(tiny());
  const Checkpoint ck = checkpoint_from_model(m);
  EXPECT_EQ(ck.tensors.size(), m.parameters().size());
  std::size_t total = 0;
  for (const auto& e : ck.tensors) total += e.value.numel();
  EXPECT_EQ(total, param_count(m.config()));
}

TEST(Checkpoint, RejectsBadMagicVersionAndTruncation) {
  const auto bytes = encode_checkpoint(checkpoint_from_model(Model<float>(tiny())));
  EXPECT_NO_THROW(decode_checkpoint(bytes));

  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), CheckpointError);

  bad = bytes;
  bad[4] = 99;
  EXPECT_THROW(decode_checkpoint(bad), CheckpointError);

  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<std::uint8_t> t(bytes.begin(), bytes.begin() + static_cast<long>(cut));
    EXPECT_THROW(decode_checkpoint(t), CheckpointError) << cut;
  }
  auto longer = bytes;
  longer.push_back(0);
  EXPECT_THROW(decode_checkpoint(longer), CheckpointError);
  EXPECT_THROW(read_checkpoint(fs::temp_directory_path() / "mdbn_no_such.mdbn"), CheckpointError);
}

TEST(Checkpoint, MissingOrMisshapenTensor) {
  Checkpoint ck = checkpoint_from_model(Model<float>(tiny()));
  Checkpoint missing = ck;
  missing.tensors.erase(missing.tensors.begin() + 2);
  try {
    model_from_checkpoint(missing);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find(ck.tensors[2].name), std::string::npos);
  }

  Checkpoint wrong = ck;
  wrong.tensors[0].value = Tensor<float>({1, 2, 3});
  EXPECT_THROW(model_from_checkpoint(wrong), CheckpointError);

  // A config that disagrees with the stored tensors.
  Checkpoint other = ck;
  other.config.channels = 8;
  EXPECT_THROW(model_from_checkpoint(other), CheckpointError);
}

TEST(Checkpoint, ExtraEntriesIgnoredByModelLoad) {
  const Model<float> m(tiny());
  Checkpoint ck = checkpoint_from_model(m);
  ck.tensors.push_back({"extra.thing", Tensor<float>({2}, 1.0f)});
  const Model<float> loaded = model_from_checkpoint(decode_checkpoint(encode_checkpoint(ck)));
  EXPECT_EQ(loaded.parameter_tally(), m.parameter_tally());
}

TEST(Checkpoint, AdamStateRoundTrip) {
  Model<float> m(tiny());
  AdamState st;
  st.step = 12345;
  std::uint64_t seed = 1;
  for (const auto& p : m.parameters()) {
    st.moments[p.name] = {mdbn::testing::random_tensor<float>(p.value->shape(), seed++),
                          mdbn::testing::random_tensor<float>(p.value->shape(), seed++, 0.0, 1.0)};
  }
  Checkpoint ck = checkpoint_from_model(m);
  append_adam_state(ck, st);
  const Checkpoint back = decode_checkpoint(encode_checkpoint(ck));
  const AdamState restored = adam_state_from_checkpoint(back);
  EXPECT_EQ(restored.step, st.step);
  ASSERT_EQ(restored.moments.size(), st.moments.size());
  for (const auto& [name, mom] : st.moments) {
    EXPECT_EQ(restored.moments.at(name).m, mom.m);
    EXPECT_EQ(restored.moments.at(name).v, mom.v);
  }
  EXPECT_NO_THROW(model_from_checkpoint(back));
}
