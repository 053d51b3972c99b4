#include "mdbn/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <numbers>
#include <sstream>

#include "mdbn/autograd.hpp"

namespace mdbn {

double cosine_lr(std::uint64_t t, const TrainSchedule& s) {
  if (t == 0) return s.lr_max;
  if (s.total_iters == 0 || t >= s.total_iters) return s.lr_min;
  const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(s.total_iters);
  return s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(phase));
}

void adam_step(std::span<const NamedParam<float>> params,
               std::span<const Tensor<float>* const> grads, AdamState& state, double lr) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_step: parameter and gradient counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i] == nullptr) throw TrainingError("missing gradient for parameter " + params[i].name);
    require_same_shape(grads[i]->shape(), params[i].value->shape(), "adam_step");
  }
  const AdamHyper& h = state.hyper;
  const std::uint64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<float>& w = *params[i].value;
    auto it = state.moments.find(params[i].name);
    if (it == state.moments.end()) {
      it = state.moments.emplace(params[i].name, AdamMoments{Tensor<float>(w.shape()), Tensor<float>(w.shape())}).first;
    }
    Tensor<float>& m = it->second.m;
    Tensor<float>& v = it->second.v;
    require_same_shape(m.shape(), w.shape(), "adam_step moments");
    const Tensor<float>& g = *grads[i];
    for (std::size_t k = 0; k < w.numel(); ++k) {
      const double gk = g[k];
      const double mk = h.beta1 * m[k] + (1.0 - h.beta1) * gk;
      const double vk = h.beta2 * v[k] + (1.0 - h.beta2) * gk * gk;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double mhat = mk / bc1;
      const double vhat = vk / bc2;
      w[k] = static_cast<float>(w[k] - lr * mhat / (std::sqrt(vhat) + h.eps));
    }
  }
  state.step = t;
}

void append_adam_state(Checkpoint& ckpt, const AdamState& state) {
  if (state.step >= (1ULL << 24)) {
    throw CheckpointError("optimizer step count too large for the checkpoint format");
  }
  for (const auto& [name, mo] : state.moments) {
    ckpt.tensors.push_back({"adam.m." + name, mo.m});
    ckpt.tensors.push_back({"adam.v." + name, mo.v});
  }
  ckpt.tensors.push_back({"adam.step", Tensor<float>::scalar(static_cast<float>(state.step))});
}

AdamState adam_state_from_checkpoint(const Checkpoint& ckpt) {
  AdamState state;
  const Tensor<float>* step = ckpt.find("adam.step");
  if (step == nullptr || step->numel() != 1) {
    throw CheckpointError("checkpoint carries no optimizer state (adam.step missing)");
  }
  state.step = static_cast<std::uint64_t>((*step)[0]);
  const std::string mp = "adam.m.";
  for (const CheckpointEntry& e : ckpt.tensors) {
    if (e.name.rfind(mp, 0) != 0) continue;
    const std::string name = e.name.substr(mp.size());
    const Tensor<float>* v = ckpt.find("adam.v." + name);
    if (v == nullptr) throw CheckpointError("checkpoint has adam.m but no adam.v for " + name);
    state.moments[name] = AdamMoments{e.value, *v};
  }
  return state;
}

// --- configuration -------------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename U>
U parse_number(const std::string& key, const std::string& text) {
  U value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError("invalid value '" + text + "' for key " + key);
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("invalid boolean '" + text + "' for key " + key);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::map<std::string, std::string> parse_key_values(std::string_view text, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key=value, got '" + t + "'");
    }
    const std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    out[key] = trim(std::string_view(t).substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> read_key_value_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

std::vector<std::string> train_config_keys() {
  return {"scale", "channels", "n_rmdb", "mdbm_per_rmdb", "hf_branch", "activation",
          "seed", "iters", "lr_max", "lr_min", "checkpoint_interval", "log_interval",
          "patch", "batch", "augment", "workers", "train_dir", "manifest"};
}

void apply_config(TrainConfig& config, const std::map<std::string, std::string>& values) {
  TrainConfig c = config;  // committed only if everything validates
  const std::vector<std::string> known = train_config_keys();
  std::vector<std::string> unknown;
  for (const auto& [k, v] : values) {
    if (std::find(known.begin(), known.end(), k) == known.end()) unknown.push_back(k);
  }
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  for (const auto& [k, v] : values) {
    if (k == "scale") c.model.scale = parse_number<std::uint32_t>(k, v);
    else if (k == "channels") c.model.channels = parse_number<std::uint32_t>(k, v);
    else if (k == "n_rmdb") c.model.n_rmdb = parse_number<std::uint32_t>(k, v);
    else if (k == "mdbm_per_rmdb") c.model.mdbm_per_rmdb = parse_number<std::uint32_t>(k, v);
    else if (k == "hf_branch") c.model.hf_branch = hf_branch_from_string(v);
    else if (k == "activation") c.model.activation = activation_from_string(v);
    else if (k == "seed") c.seed = parse_number<std::uint64_t>(k, v);
    else if (k == "iters") c.schedule.total_iters = parse_number<std::uint64_t>(k, v);
    else if (k == "lr_max") c.schedule.lr_max = parse_number<double>(k, v);
    else if (k == "lr_min") c.schedule.lr_min = parse_number<double>(k, v);
    else if (k == "checkpoint_interval") c.schedule.checkpoint_interval = parse_number<std::uint64_t>(k, v);
    else if (k == "log_interval") c.schedule.log_interval = parse_number<std::uint64_t>(k, v);
    else if (k == "patch") c.patch = parse_number<std::size_t>(k, v);
    else if (k == "batch") c.batch = parse_number<std::size_t>(k, v);
    else if (k == "augment") c.augment = parse_bool(k, v);
    else if (k == "workers") c.workers = parse_number<std::size_t>(k, v);
    else if (k == "train_dir") c.train_dir = v;
    else if (k == "manifest") c.manifest = v;
  }
  c.model.seed = c.seed;
  c.model.validate();
  if (c.schedule.lr_min > c.schedule.lr_max) throw ConfigError("lr_min exceeds lr_max");
  if (c.schedule.log_interval == 0) throw ConfigError("log_interval must be positive");
  config = std::move(c);
}

std::map<std::string, std::string> to_key_values(const TrainConfig& c) {
  return {
      {"scale", std::to_string(c.model.scale)},
      {"channels", std::to_string(c.model.channels)},
      {"n_rmdb", std::to_string(c.model.n_rmdb)},
      {"mdbm_per_rmdb", std::to_string(c.model.mdbm_per_rmdb)},
      {"hf_branch", to_string(c.model.hf_branch)},
      {"activation", to_string(c.model.activation)},
      {"seed", std::to_string(c.seed)},
      {"iters", std::to_string(c.schedule.total_iters)},
      {"lr_max", format_double(c.schedule.lr_max)},
      {"lr_min", format_double(c.schedule.lr_min)},
      {"checkpoint_interval", std::to_string(c.schedule.checkpoint_interval)},
      {"log_interval", std::to_string(c.schedule.log_interval)},
      {"patch", std::to_string(c.patch)},
      {"batch", std::to_string(c.batch)},
      {"augment", c.augment ? "true" : "false"},
      {"workers", std::to_string(c.workers)},
      {"train_dir", c.train_dir},
      {"manifest", c.manifest},
  };
}

// --- training loop -------------------------------------------------------------

std::string checkpoint_filename(std::uint64_t completed_iters) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "ckpt_%08llu.mdbn", static_cast<unsigned long long>(completed_iters));
  return buf;
}

namespace {

void save_training_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                              const AdamState& state) {
  Checkpoint ckpt = checkpoint_from_model(model);
  append_adam_state(ckpt, state);
  write_checkpoint(path, ckpt);
}

}  // namespace

TrainResult train_loop(Model<float>& model, const std::vector<ImagePair>& pairs,
                       const TrainConfig& config, const TrainOptions& options) {
  namespace fs = std::filesystem;
  if (pairs.empty()) throw TrainingError("training set is empty");
  if (model.config() != config.model) {
    throw TrainingError("model configuration does not match the training configuration");
  }
  for (const ImagePair& p : pairs) {
    if (p.scale != config.model.scale) {
      throw TrainingError("image pair " + p.id + " was built for scale " + std::to_string(p.scale));
    }
  }

  TrainResult result;
  AdamState state;
  if (options.resume) {
    const Checkpoint ckpt = read_checkpoint(*options.resume);
    if (ckpt.config != config.model) {
      throw TrainingError("checkpoint " + options.resume->string() +
                          " has a different model configuration");
    }
    model = model_from_checkpoint(ckpt);
    state = adam_state_from_checkpoint(ckpt);
  }
  result.start_iter = state.step;
  const std::uint64_t stop = std::min(options.stop_at.value_or(config.schedule.total_iters),
                                      config.schedule.total_iters);

  std::ofstream csv;
  const bool write = !options.out_dir.empty();
  if (write) {
    fs::create_directories(options.out_dir);
    const fs::path csv_path = options.out_dir / "loss.csv";
    const bool append = options.resume.has_value() && fs::exists(csv_path);
    if (append) {
      // Drop rows past the resume point so the log stays one row per step.
      std::vector<LossRecord> kept;
      for (const LossRecord& r : read_loss_csv(csv_path)) {
        if (r.iter < state.step) kept.push_back(r);
      }
      csv.open(csv_path, std::ios::trunc);
      csv << "iter,lr,loss\n";
      for (const LossRecord& r : kept) {
        csv << r.iter << "," << format_double(r.lr) << "," << format_double(r.loss) << "\n";
      }
    } else {
      csv.open(csv_path, std::ios::trunc);
      csv << "iter,lr,loss\n";
    }
    if (!csv) throw TrainingError("cannot write " + csv_path.string());
  }

  SamplerConfig sc;
  sc.patch = config.patch;
  sc.batch = config.batch;
  sc.augment = config.augment;
  sc.seed = config.seed;
  BatchSampler sampler(pairs, sc);
  std::unique_ptr<Prefetcher> prefetch;
  if (config.workers > 0 && state.step < stop) {
    prefetch = std::make_unique<Prefetcher>(sampler, state.step, stop, 2 * config.workers + 2);
  }

  std::vector<NamedParam<float>> params = model.parameters();
  std::vector<const Tensor<float>*> grads(params.size());
  for (std::uint64_t it = state.step; it < stop; ++it) {
    const double lr = cosine_lr(it, config.schedule);
    Batch batch = prefetch ? prefetch->next() : sampler.batch_at(it);

    Tape<float> tape;
    TapeContext<float> ctx(tape);
    Var<float> sr = mdbn_forward(ctx, model, batch.lr);
    Var<float> target = tape.constant(std::move(batch.hr));
    Var<float> loss = mean_abs_error(sr, target);
    const double loss_value = loss.value()[0];
    tape.backward(loss);
    for (std::size_t i = 0; i < params.size(); ++i) grads[i] = ctx.grad(*params[i].value);

    if (!std::isfinite(loss_value)) {
      double max_grad = 0.0;
      for (const Tensor<float>* g : grads) {
        if (g != nullptr) max_grad = std::max(max_grad, max_abs(*g));
      }
      char buf[160];
      std::snprintf(buf, sizeof buf, "non-finite loss at iter %llu (lr=%.6g, max|grad|=%.6g)",
                    static_cast<unsigned long long>(it), lr, max_grad);
      throw TrainingError(buf);
    }
    adam_step(params, grads, state, lr);

    const LossRecord rec{it, lr, loss_value};
    result.log.push_back(rec);
    if (write) {
      csv << rec.iter << "," << format_double(rec.lr) << "," << format_double(rec.loss) << "\n";
      if ((it + 1) % config.schedule.log_interval == 0) csv.flush();
    }
    if (options.on_step) options.on_step(rec);
    if (write && config.schedule.checkpoint_interval > 0 &&
        (it + 1) % config.schedule.checkpoint_interval == 0 && it + 1 < stop) {
      save_training_checkpoint(options.out_dir / checkpoint_filename(it + 1), model, state);
    }
  }
  result.end_iter = state.step;
  if (write) {
    csv.flush();
    result.final_checkpoint = options.out_dir / checkpoint_filename(state.step);
    save_training_checkpoint(result.final_checkpoint, model, state);
  }
  result.optimizer = std::move(state);
  return result;
}

std::vector<LossRecord> read_loss_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TrainingError("cannot read loss log " + path.string());
  std::vector<LossRecord> out;
  std::string line;
  std::getline(in, line);
  if (line != "iter,lr,loss") throw TrainingError("unexpected loss log header in " + path.string());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto a = line.find(',');
    const auto b = line.find(',', a + 1);
    if (a == std::string::npos || b == std::string::npos) {
      throw TrainingError("malformed loss log row: " + line);
    }
    LossRecord r;
    r.iter = parse_number<std::uint64_t>("iter", line.substr(0, a));
    r.lr = parse_number<double>("lr", line.substr(a + 1, b - a - 1));
    r.loss = parse_number<double>("loss", line.substr(b + 1));
    out.push_back(r);
  }
  return out;
}

}  // namespace mdbn
