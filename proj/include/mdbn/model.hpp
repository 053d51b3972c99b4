#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mdbn/autograd.hpp"
#include "mdbn/nn_ops.hpp"
#include "mdbn/tensor.hpp"

namespace mdbn {

enum class HfBranch : std::uint8_t { two_3x3 = 0, single_5x5 = 1 };
enum class Activation : std::uint8_t { gelu = 0, leaky_relu = 1 };

const char* to_string(HfBranch v) noexcept;
const char* to_string(Activation v) noexcept;
HfBranch hf_branch_from_string(const std::string& s);
Activation activation_from_string(const std::string& s);

struct ModelConfig {
  std::uint32_t scale = 2;  // 1 builds no upsampler stage
  std::uint32_t channels = 64;
  std::uint32_t n_rmdb = 6;
  std::uint32_t mdbm_per_rmdb = 2;
  HfBranch hf_branch = HfBranch::two_3x3;
  Activation activation = Activation::gelu;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Upsampler shuffle factors per stage: x2 and x3 use one stage, x4 two x2 stages.
std::vector<std::uint32_t> upsampler_factors(std::uint32_t scale);

// Closed-form parameter count of the model `config` instantiates.
std::size_t param_count(const ModelConfig& config);

struct TapSite {
  std::size_t rmdb = 2;
  std::size_t mdbm = 1;
  auto operator<=>(const TapSite&) const = default;
};

std::string to_string(const TapSite& site);
TapSite parse_tap_site(const std::string& text);  // "rmdb:mdbm"

template <typename T>
struct FeatureTapRecord {
  TapSite site;
  Tensor<T> f_hf;      // deep branch, before fusion
  Tensor<T> f_lf;      // shallow branch, before fusion
  Tensor<T> f_output;  // after the fusion activation
};

template <typename T>
struct Mdbm {
  Conv2dParams<T> hf1;                // 3x3, or 5x5 in the single_5x5 variant
  std::optional<Conv2dParams<T>> hf2; // absent in the single_5x5 variant
  Conv2dParams<T> lf;
};

template <typename T>
struct UpsampleStage {
  Conv2dParams<T> conv;  // C -> C r^2
  std::uint32_t factor = 2;
};

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T>* value;
};

template <typename T>
struct ConstNamedParam {
  std::string name;
  const Tensor<T>* value;
};

template <typename T>
class Model {
 public:
  Model() = default;
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const noexcept { return config_; }

  std::vector<NamedParam<T>> parameters();
  std::vector<ConstNamedParam<T>> parameters() const;
  // Sum of numel over every instantiated tensor.
  std::size_t parameter_tally() const;
  std::vector<TapSite> valid_tap_sites() const;
  void validate_tap_site(const TapSite& site) const;

  template <typename U>
  Model<U> cast() const;

  Conv2dParams<T> head;
  std::vector<std::vector<Mdbm<T>>> blocks;
  std::vector<UpsampleStage<T>> upsampler;
  Conv2dParams<T> tail;

 private:
  template <typename U>
  friend class Model;

  ModelConfig config_;
};

// Execution contexts. The network is written once against this interface and
// evaluated either eagerly (inference) or on a gradient tape (training).

template <typename T>
class EagerContext {
 public:
  using Value = Tensor<T>;

  explicit EagerContext(ConvAlgorithm algo = default_conv_algorithm()) : algo_(algo) {}

  Value input(const Tensor<T>& x) { return x; }
  Value conv(const Value& x, const Conv2dParams<T>& p) {
    return conv2d_forward(x, p.weight, p.bias, algo_);
  }
  Value activate(const Value& x, Activation a) {
    return a == Activation::gelu ? gelu_forward(x) : leaky_relu_forward(x, kDefaultLeakySlope);
  }
  Value add(const Value& a, const Value& b) { return add_values(a, b); }
  Value shuffle(const Value& x, std::size_t r) { return pixel_shuffle_forward(x, r); }
  static const Tensor<T>& tensor(const Value& v) { return v; }

 private:
  ConvAlgorithm algo_;
};

template <typename T>
class TapeContext {
 public:
  using Value = Var<T>;

  explicit TapeContext(Tape<T>& tape, ConvAlgorithm algo = default_conv_algorithm())
      : tape_(tape), algo_(algo) {}

  Value input(const Tensor<T>& x) { return tape_.constant(x); }
  Value conv(const Value& x, const Conv2dParams<T>& p) {
    return conv2d(x, bind(p.weight), bind(p.bias), algo_);
  }
  Value activate(const Value& x, Activation a) {
    return a == Activation::gelu ? gelu(x) : leaky_relu(x, kDefaultLeakySlope);
  }
  Value add(const Value& a, const Value& b) { return mdbn::add(a, b); }
  Value shuffle(const Value& x, std::size_t r) { return pixel_shuffle(x, r); }
  static const Tensor<T>& tensor(const Value& v) { return v.value(); }

  // Registers a parameter tensor as a tape leaf the first time it is used.
  Var<T> bind(const Tensor<T>& param) {
    auto it = bindings_.find(&param);
    if (it != bindings_.end()) return it->second;
    Var<T> v = tape_.parameter(param);
    bindings_.emplace(&param, v);
    return v;
  }

  // Gradient of a bound parameter after backward(); nullptr when the
  // parameter never took part in the forward pass.
  const Tensor<T>* grad(const Tensor<T>& param) const {
    auto it = bindings_.find(&param);
    if (it == bindings_.end() || !tape_.has_grad(it->second)) return nullptr;
    return &tape_.grad(it->second);
  }

  Tape<T>& tape() noexcept { return tape_; }

 private:
  Tape<T>& tape_;
  ConvAlgorithm algo_;
  std::unordered_map<const Tensor<T>*, Var<T>> bindings_;
};

template <typename Ctx, typename T>
typename Ctx::Value mdbm_forward(Ctx& ctx, const Mdbm<T>& block, Activation act,
                                 const typename Ctx::Value& x,
                                 FeatureTapRecord<T>* tap = nullptr) {
  typename Ctx::Value hf = ctx.conv(x, block.hf1);
  if (block.hf2) hf = ctx.conv(ctx.activate(hf, act), *block.hf2);
  typename Ctx::Value lf = ctx.conv(x, block.lf);
  typename Ctx::Value out = ctx.activate(ctx.add(hf, lf), act);
  if (tap != nullptr) {
    tap->f_hf = Ctx::tensor(hf);
    tap->f_lf = Ctx::tensor(lf);
    tap->f_output = Ctx::tensor(out);
  }
  return out;
}

// x + MDBM_k(...MDBM_1(x)). `taps` receives records for requested sites.
template <typename Ctx, typename T>
typename Ctx::Value rmdb_forward(Ctx& ctx, const std::vector<Mdbm<T>>& block, Activation act,
                                 const typename Ctx::Value& x, std::size_t rmdb_index = 0,
                                 const std::vector<TapSite>* sites = nullptr,
                                 std::vector<FeatureTapRecord<T>>* taps = nullptr) {
  typename Ctx::Value h = x;
  for (std::size_t m = 0; m < block.size(); ++m) {
    FeatureTapRecord<T>* rec = nullptr;
    if (sites != nullptr && taps != nullptr) {
      for (const TapSite& s : *sites) {
        if (s.rmdb == rmdb_index && s.mdbm == m) {
          taps->push_back(FeatureTapRecord<T>{s, {}, {}, {}});
          rec = &taps->back();
          break;
        }
      }
    }
    h = mdbm_forward(ctx, block[m], act, h, rec);
  }
  return ctx.add(x, h);
}

void validate_model_input(const Shape& lr, std::size_t min_size = 8);

template <typename Ctx, typename T>
typename Ctx::Value mdbn_forward(Ctx& ctx, const Model<T>& model, const Tensor<T>& lr,
                                 const std::vector<TapSite>& sites = {},
                                 std::vector<FeatureTapRecord<T>>* taps = nullptr) {
  validate_model_input(lr.shape());
  for (const TapSite& s : sites) model.validate_tap_site(s);
  if (taps != nullptr) taps->reserve(taps->size() + sites.size());
  const Activation act = model.config().activation;
  typename Ctx::Value initial = ctx.conv(ctx.input(lr), model.head);
  typename Ctx::Value deep = initial;
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    deep = rmdb_forward(ctx, model.blocks[b], act, deep, b, &sites, taps);
  }
  typename Ctx::Value feat = ctx.add(initial, deep);
  for (const UpsampleStage<T>& stage : model.upsampler) {
    feat = ctx.shuffle(ctx.conv(feat, stage.conv), stage.factor);
  }
  return ctx.conv(feat, model.tail);
}

// Eager inference. Output is not clamped.
template <typename T>
Tensor<T> infer(const Model<T>& model, const Tensor<T>& lr,
                ConvAlgorithm algo = default_conv_algorithm(),
                const std::vector<TapSite>& sites = {},
                std::vector<FeatureTapRecord<T>>* taps = nullptr) {
  EagerContext<T> ctx(algo);
  return mdbn_forward(ctx, model, lr, sites, taps);
}

}  // namespace mdbn
