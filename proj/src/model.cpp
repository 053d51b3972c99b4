#include "mdbn/model.hpp"

#include <charconv>
#include <random>
#include <stdexcept>

namespace mdbn {

namespace {

std::uint64_t layer_seed(std::uint64_t seed, std::uint64_t layer) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(layer), 0x6d64626eU};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

}  // namespace

const char* to_string(HfBranch v) noexcept {
  return v == HfBranch::two_3x3 ? "two_3x3" : "single_5x5";
}

const char* to_string(Activation v) noexcept {
  return v == Activation::gelu ? "gelu" : "leaky_relu";
}

HfBranch hf_branch_from_string(const std::string& s) {
  if (s == "two_3x3") return HfBranch::two_3x3;
  if (s == "single_5x5") return HfBranch::single_5x5;
  throw std::invalid_argument("unknown hf_branch '" + s + "' (expected two_3x3|single_5x5)");
}

Activation activation_from_string(const std::string& s) {
  if (s == "gelu") return Activation::gelu;
  if (s == "leaky_relu") return Activation::leaky_relu;
  throw std::invalid_argument("unknown activation '" + s + "' (expected gelu|leaky_relu)");
}

void ModelConfig::validate() const {
  if (scale < 1 || scale > 4) {
    throw std::invalid_argument("scale must be 1, 2, 3 or 4, got " + std::to_string(scale));
  }
  if (channels == 0) throw std::invalid_argument("channels must be positive");
  if (mdbm_per_rmdb != 1 && mdbm_per_rmdb != 2) {
    throw std::invalid_argument("mdbm_per_rmdb must be 1 or 2");
  }
}

std::vector<std::uint32_t> upsampler_factors(std::uint32_t scale) {
  switch (scale) {
    case 1: return {};
    case 2: return {2};
    case 3: return {3};
    case 4: return {2, 2};
    default: throw std::invalid_argument("unsupported scale " + std::to_string(scale));
  }
}

std::size_t param_count(const ModelConfig& config) {
  config.validate();
  const std::size_t c = config.channels;
  std::size_t total = 27 * c + c;  // head: 3 -> C, 3x3
  const std::size_t mdbm = config.hf_branch == HfBranch::two_3x3
                               ? 3 * (9 * c * c + c)
                               : (25 * c * c + c) + (9 * c * c + c);
  total += static_cast<std::size_t>(config.n_rmdb) * config.mdbm_per_rmdb * mdbm;
  for (std::uint32_t r : upsampler_factors(config.scale)) {
    total += 9 * c * (c * r * r) + c * r * r;
  }
  total += 27 * c + 3;  // tail: C -> 3, 3x3
  return total;
}

std::string to_string(const TapSite& site) {
  return std::to_string(site.rmdb) + ":" + std::to_string(site.mdbm);
}

TapSite parse_tap_site(const std::string& text) {
  const auto colon = text.find(':');
  TapSite site;
  auto parse = [&](std::string_view part, std::size_t& out) {
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
    if (ec != std::errc{} || ptr != part.data() + part.size() || part.empty()) {
      throw std::invalid_argument("tap site must look like RMDB:MDBM, got '" + text + "'");
    }
  };
  if (colon == std::string::npos) {
    throw std::invalid_argument("tap site must look like RMDB:MDBM, got '" + text + "'");
  }
  const std::string_view sv(text);
  parse(sv.substr(0, colon), site.rmdb);
  parse(sv.substr(colon + 1), site.mdbm);
  return site;
}

void validate_model_input(const Shape& lr, std::size_t min_size) {
  if (lr.size() != 4 || lr[1] != 3) {
    throw ShapeError("model input must be [N, 3, H, W], got " + shape_to_string(lr));
  }
  if (lr[2] < min_size || lr[3] < min_size) {
    throw ShapeError("model input spatial size must be at least " + std::to_string(min_size) +
                     ", got " + shape_to_string(lr));
  }
}

template <typename T>
Model<T>::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  const std::size_t c = config_.channels;
  std::uint64_t layer = 0;
  auto next = [&](std::size_t c_out, std::size_t c_in, std::size_t k) {
    return init_conv<T>(c_out, c_in, k, layer_seed(config_.seed, layer++));
  };
  head = next(c, 3, 3);
  blocks.resize(config_.n_rmdb);
  for (auto& block : blocks) {
    block.resize(config_.mdbm_per_rmdb);
    for (Mdbm<T>& m : block) {
      if (config_.hf_branch == HfBranch::two_3x3) {
        m.hf1 = next(c, c, 3);
        m.hf2 = next(c, c, 3);
      } else {
        m.hf1 = next(c, c, 5);
      }
      m.lf = next(c, c, 3);
    }
  }
  for (std::uint32_t r : upsampler_factors(config_.scale)) {
    upsampler.push_back(UpsampleStage<T>{next(c * r * r, c, 3), r});
  }
  tail = next(3, c, 3);
}

template <typename T>
std::vector<NamedParam<T>> Model<T>::parameters() {
  std::vector<NamedParam<T>> out;
  auto conv = [&](const std::string& prefix, Conv2dParams<T>& p) {
    out.push_back({prefix + ".weight", &p.weight});
    out.push_back({prefix + ".bias", &p.bias});
  };
  conv("head", head);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (std::size_t m = 0; m < blocks[b].size(); ++m) {
      const std::string prefix = "blocks." + std::to_string(b) + ".mdbm." + std::to_string(m);
      Mdbm<T>& blk = blocks[b][m];
      conv(prefix + ".hf1", blk.hf1);
      if (blk.hf2) conv(prefix + ".hf2", *blk.hf2);
      conv(prefix + ".lf", blk.lf);
    }
  }
  for (std::size_t s = 0; s < upsampler.size(); ++s) {
    conv("upsampler." + std::to_string(s), upsampler[s].conv);
  }
  conv("tail", tail);
  return out;
}

template <typename T>
std::vector<ConstNamedParam<T>> Model<T>::parameters() const {
  std::vector<ConstNamedParam<T>> out;
  for (const NamedParam<T>& p : const_cast<Model&>(*this).parameters()) {
    out.push_back({p.name, p.value});
  }
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_tally() const {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p.value->numel();
  return total;
}

template <typename T>
std::vector<TapSite> Model<T>::valid_tap_sites() const {
  std::vector<TapSite> sites;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (std::size_t m = 0; m < blocks[b].size(); ++m) sites.push_back({b, m});
  }
  return sites;
}

template <typename T>
void Model<T>::validate_tap_site(const TapSite& site) const {
  if (site.rmdb < blocks.size() && site.mdbm < blocks[site.rmdb].size()) return;
  std::string msg = "invalid tap site " + to_string(site) + "; valid sites:";
  for (const TapSite& s : valid_tap_sites()) msg += " " + to_string(s);
  throw std::invalid_argument(msg);
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> out;
  out.config_ = config_;
  out.head = head.template cast<U>();
  out.blocks.resize(blocks.size());
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (const Mdbm<T>& m : blocks[b]) {
      Mdbm<U> mu;
      mu.hf1 = m.hf1.template cast<U>();
      if (m.hf2) mu.hf2 = m.hf2->template cast<U>();
      mu.lf = m.lf.template cast<U>();
      out.blocks[b].push_back(std::move(mu));
    }
  }
  for (const UpsampleStage<T>& s : upsampler) {
    out.upsampler.push_back(UpsampleStage<U>{s.conv.template cast<U>(), s.factor});
  }
  out.tail = tail.template cast<U>();
  return out;
}

template class Model<float>;
template class Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;

}  // namespace mdbn
