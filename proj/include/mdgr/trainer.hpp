#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mdgr/checkpoint.hpp"
#include "mdgr/model.hpp"
#include "mdgr/optim.hpp"
#include "mdgr/rng.hpp"
#include "mdgr/schedule.hpp"
#include "mdgr/sid.hpp"

namespace mdgr {

enum class LossNormalization {
  kSum,   // sum over masked positions, averaged over the batch
  kMean,  // per-sample mean over masked positions, averaged over the batch
};
LossNormalization parse_loss_normalization(const std::string& text);
std::string to_string(LossNormalization norm);

struct TrainConfig {
  int batch_size = 32;
  std::int64_t steps = 2000;
  AdamConfig adam;
  // Validation every eval_interval steps; 0 disables it.
  std::int64_t eval_interval = 0;
  std::uint64_t seed = 0;
  // curriculum.total_steps; 0 means "same as steps".
  CurriculumConfig curriculum{.gamma = 2.0, .total_steps = 0};
  double mask_epsilon = 0.1;
  LossNormalization loss_normalization = LossNormalization::kSum;

  // Ablations.
  bool random_quantity = false;       // k ~ uniform{1..L}
  bool random_positions = false;      // M uniform over positions
  bool vanilla_mask = false;          // both of the above
  bool no_difficulty_vector = false;  // d_k not added

  void validate() const;
  bool uniform_quantity() const { return random_quantity || vanilla_mask; }
  bool uniform_positions() const { return random_positions || vanilla_mask; }
};

struct TrainingExample {
  std::vector<Sid> history;
  Sid target;
};

struct NoiseSample {
  MaskedSid masked;
  int mask_count = 0;
};

// Corrupts `target` for training step n: k from the curriculum (or uniform),
// positions from the history-aware distribution (or uniform).
NoiseSample sample_noise(Rng& rng, const Sid& target, std::span<const Sid> history,
                         std::int64_t step, const TrainConfig& cfg);

struct StepResult {
  double loss = 0.0;
  double mean_mask_count = 0.0;
};

// Owns parameters and optimizer state for one training run. Noise at step n
// depends only on (seed, n), so a resumed run reproduces an uninterrupted one.
class Trainer {
 public:
  Trainer(ModelConfig model, TrainConfig cfg);
  Trainer(Checkpoint ckpt, TrainConfig cfg);

  // Loss and gradients for one batch at the current step, without updating.
  double compute_loss(std::span<const TrainingExample> batch, ParameterSet<float>* grads,
                      StepResult* info = nullptr) const;

  // One Adam update; advances the step counter.
  StepResult step(std::span<const TrainingExample> batch);

  std::int64_t current_step() const noexcept { return step_; }
  const ModelConfig& model_config() const noexcept { return model_; }
  const TrainConfig& config() const noexcept { return cfg_; }
  const ParameterSet<float>& params() const noexcept { return params_; }
  ParameterSet<float>& mutable_params() noexcept { return params_; }
  const AdamState<float>& optimizer() const noexcept { return opt_; }
  Checkpoint checkpoint() const;

 private:
  ModelConfig model_;
  TrainConfig cfg_;
  ParameterSet<float> params_;
  AdamState<float> opt_;
  std::int64_t step_ = 0;
  std::uint64_t noise_seed_;
  std::uint64_t dropout_seed_;
};

// Model config adjusted for the training ablations.
ModelConfig effective_model_config(ModelConfig model, const TrainConfig& cfg);

using Validator = std::function<std::map<std::string, double>(const Trainer&)>;

struct TrainLoopOptions {
  // JSONL lines {"step", "loss", "mask_count", "eval"?}; empty = no file.
  std::string metrics_path;
  Validator validator;
  // Called after every step with (step, loss).
  std::function<void(std::int64_t, double)> on_step;
};

// Runs the trainer to cfg.steps over sliding-window pairs of `sequences`
// (item indices into `item_sids`); windows cover max_history + 1 items.
// Data is cycled with a reshuffle when an epoch runs out.
std::vector<double> train_loop(Trainer& trainer, const std::vector<std::vector<int>>& sequences,
                               const std::vector<Sid>& item_sids, const TrainLoopOptions& options);

}  // namespace mdgr
