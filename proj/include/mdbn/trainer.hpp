#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mdbn/checkpoint.hpp"
#include "mdbn/data.hpp"
#include "mdbn/model.hpp"

namespace mdbn {

struct TrainSchedule {
  std::uint64_t total_iters = 1'800'000;
  double lr_max = 2e-4;
  double lr_min = 1e-7;
  std::uint64_t checkpoint_interval = 0;  // 0: only at exit
  std::uint64_t log_interval = 1;         // CSV flush cadence
};

// Single-cycle cosine annealing from lr_max at t = 0 to lr_min at t = T.
// Values past T clamp to lr_min.
double cosine_lr(std::uint64_t t, const TrainSchedule& schedule);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

struct AdamMoments {
  Tensor<float> m;
  Tensor<float> v;
};

struct AdamState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  std::map<std::string, AdamMoments> moments;  // keyed by parameter name
};

// Bias-corrected Adam. grads[i] belongs to params[i]; a null entry is an error
// naming the parameter.
void adam_step(std::span<const NamedParam<float>> params,
               std::span<const Tensor<float>* const> grads, AdamState& state, double lr);

// Optimizer entries are stored as "adam.m.<param>", "adam.v.<param>" and a
// scalar "adam.step" (exact for step counts below 2^24).
void append_adam_state(Checkpoint& ckpt, const AdamState& state);
AdamState adam_state_from_checkpoint(const Checkpoint& ckpt);

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  ModelConfig model;
  TrainSchedule schedule;
  std::size_t patch = 64;
  std::size_t batch = 16;
  bool augment = true;
  std::size_t workers = 0;  // 0: batches are built on the training thread
  std::string train_dir;
  std::string manifest;
  std::uint64_t seed = 0;  // model init and sampling
};

// Flat key=value lines; '#' starts a comment. Later keys override earlier.
std::map<std::string, std::string> parse_key_values(std::string_view text,
                                                    const std::string& origin = "config");
std::map<std::string, std::string> read_key_value_file(const std::filesystem::path& path);
// Applies the given keys; unknown keys produce one error listing all of them.
// On any error `config` is left unchanged.
void apply_config(TrainConfig& config, const std::map<std::string, std::string>& values);
std::vector<std::string> train_config_keys();
std::map<std::string, std::string> to_key_values(const TrainConfig& config);

struct LossRecord {
  std::uint64_t iter = 0;  // zero-based optimizer step
  double lr = 0.0;
  double loss = 0.0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainOptions {
  std::filesystem::path out_dir;        // empty: nothing written to disk
  std::optional<std::filesystem::path> resume;
  std::optional<std::uint64_t> stop_at;  // stop before this step (defaults to T)
  std::function<void(const LossRecord&)> on_step;
};

struct TrainResult {
  std::vector<LossRecord> log;
  std::uint64_t start_iter = 0;
  std::uint64_t end_iter = 0;
  std::filesystem::path final_checkpoint;
  AdamState optimizer;
};

std::string checkpoint_filename(std::uint64_t completed_iters);

// Minimizes the mean absolute error between model(lr) and hr over batches
// drawn from `pairs`. Writes loss.csv (iter,lr,loss) and checkpoints under
// out_dir. On resume the model weights and optimizer state are restored from
// the checkpoint and the step counter continues.
TrainResult train_loop(Model<float>& model, const std::vector<ImagePair>& pairs,
                       const TrainConfig& config, const TrainOptions& options = {});

std::vector<LossRecord> read_loss_csv(const std::filesystem::path& path);

}  // namespace mdbn
