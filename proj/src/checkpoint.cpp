#include "mdbn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace mdbn {

namespace {

class Writer {
 public:
  template <typename U>
  void put(U v) {
    static_assert(std::is_integral_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bytes_.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
    }
  }
  void put_f32(float f) { put(std::bit_cast<std::uint32_t>(f)); }
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    }
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint truncated");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const CheckpointEntry& e : tensors) {
    if (e.name == name) return &e.value;
  }
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.put_bytes("MDBN", 4);
  w.put(kCheckpointVersion);
  const ModelConfig& c = ckpt.config;
  w.put(c.scale);
  w.put(c.channels);
  w.put(c.n_rmdb);
  w.put(c.mdbm_per_rmdb);
  w.put(static_cast<std::uint8_t>(c.hf_branch));
  w.put(static_cast<std::uint8_t>(c.activation));
  w.put(c.seed);
  w.put(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const CheckpointEntry& e : ckpt.tensors) {
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw CheckpointError("tensor name too long: " + e.name.substr(0, 32) + "...");
    }
    if (e.value.rank() > std::numeric_limits<std::uint8_t>::max()) {
      throw CheckpointError("tensor rank too large: " + e.name);
    }
    w.put(static_cast<std::uint16_t>(e.name.size()));
    w.put_bytes(e.name.data(), e.name.size());
    w.put(kDtypeF32);
    w.put(static_cast<std::uint8_t>(e.value.rank()));
    for (std::size_t d : e.value.shape()) w.put(static_cast<std::uint64_t>(d));
    for (float f : e.value.data()) w.put_f32(f);
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.get_string(4) != "MDBN") throw CheckpointError("not an MDBN checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ModelConfig& c = ckpt.config;
  c.scale = r.get<std::uint32_t>();
  c.channels = r.get<std::uint32_t>();
  c.n_rmdb = r.get<std::uint32_t>();
  c.mdbm_per_rmdb = r.get<std::uint32_t>();
  const auto hf = r.get<std::uint8_t>();
  const auto act = r.get<std::uint8_t>();
  if (hf > 1 || act > 1) throw CheckpointError("checkpoint has unknown variant codes");
  c.hf_branch = static_cast<HfBranch>(hf);
  c.activation = static_cast<Activation>(act);
  c.seed = r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = r.get_string(r.get<std::uint16_t>());
    if (r.get<std::uint8_t>() != kDtypeF32) {
      throw CheckpointError("tensor " + e.name + " has an unsupported dtype");
    }
    Shape shape(r.get<std::uint8_t>());
    for (std::size_t& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    std::vector<float> data(shape_numel(shape));
    for (float& f : data) f = r.get_f32();
    e.value = Tensor<float>(std::move(shape), std::move(data));
    ckpt.tensors.push_back(std::move(e));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint payload");
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::vector<std::uint8_t> bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint checkpoint_from_model(const Model<float>& model) {
  Checkpoint ckpt;
  ckpt.config = model.config();
  for (const ConstNamedParam<float>& p : model.parameters()) {
    ckpt.tensors.push_back({p.name, *p.value});
  }
  return ckpt;
}

Model<float> model_from_checkpoint(const Checkpoint& ckpt) {
  Model<float> model(ckpt.config);
  for (NamedParam<float>& p : model.parameters()) {
    const Tensor<float>* t = ckpt.find(p.name);
    if (t == nullptr) throw CheckpointError("checkpoint is missing tensor " + p.name);
    if (t->shape() != p.value->shape()) {
      throw CheckpointError("tensor " + p.name + " has shape " + shape_to_string(t->shape()) +
                            ", model expects " + shape_to_string(p.value->shape()));
    }
    *p.value = *t;
  }
  return model;
}

}  // namespace mdbn
