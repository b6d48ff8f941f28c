#include "mdgr/trainer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mdgr/data.hpp"
#include "mdgr/error.hpp"

namespace mdgr {

LossNormalization parse_loss_normalization(const std::string& text) {
  if (text == "sum") return LossNormalization::kSum;
  if (text == "mean") return LossNormalization::kMean;
  fail(ErrorKind::kInvalidArgument, "unknown loss normalization '" + text + "'");
}

std::string to_string(LossNormalization norm) {
  return norm == LossNormalization::kSum ? "sum" : "mean";
}

void TrainConfig::validate() const {
  require(batch_size >= 1, ErrorKind::kInvalidArgument, "train: batch size must be >= 1");
  require(steps >= 0, ErrorKind::kInvalidArgument, "train: steps must be >= 0");
  require(eval_interval >= 0, ErrorKind::kInvalidArgument, "train: eval interval must be >= 0");
  require(mask_epsilon > 0.0, ErrorKind::kInvalidArgument, "masking: epsilon must be positive");
  require(adam.lr > 0.0 && adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 &&
              adam.beta2 < 1.0 && adam.eps > 0.0,
          ErrorKind::kInvalidArgument, "train: invalid Adam settings");
  CurriculumConfig resolved = curriculum;
  if (resolved.total_steps <= 0) resolved.total_steps = std::max<std::int64_t>(1, steps);
  resolved.validate();
}

ModelConfig effective_model_config(ModelConfig model, const TrainConfig& cfg) {
  if (cfg.no_difficulty_vector) model.difficulty_embedding = false;
  return model;
}

NoiseSample sample_noise(Rng& rng, const Sid& target, std::span<const Sid> history,
                         std::int64_t step, const TrainConfig& cfg) {
  const int L = target.length();
  require(!history.empty(), ErrorKind::kInvalidArgument,
          "training sample has an empty history");
  NoiseSample out;
  out.mask_count = cfg.uniform_quantity()
                       ? 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(L)))
                       : sample_mask_count(rng, step, cfg.curriculum, L);
  std::vector<double> probs;
  if (cfg.uniform_positions()) {
    probs.assign(static_cast<std::size_t>(L), 1.0 / L);
  } else {
    const auto freq = history_token_frequencies(target, history);
    probs = mask_position_distribution(freq, cfg.mask_epsilon);
  }
  out.masked = apply_mask(target, sample_mask_positions(rng, probs, out.mask_count));
  return out;
}

namespace {

TrainConfig resolved(TrainConfig cfg) {
  if (cfg.curriculum.total_steps <= 0) cfg.curriculum.total_steps = std::max<std::int64_t>(1, cfg.steps);
  cfg.validate();
  return cfg;
}

}  // namespace

Trainer::Trainer(ModelConfig model, TrainConfig cfg)
    : model_(effective_model_config(std::move(model), cfg)), cfg_(resolved(std::move(cfg))) {
  model_.validate();
  Rng root(cfg_.seed);
  Rng init = root.derive("init");
  params_ = init_parameters<float>(model_, init);
  opt_ = AdamState<float>::for_params(params_);
  noise_seed_ = root.derive("noise").seed();
  dropout_seed_ = root.derive("dropout").seed();
}

Trainer::Trainer(Checkpoint ckpt, TrainConfig cfg)
    : model_(effective_model_config(std::move(ckpt.config), cfg)),
      cfg_(resolved(std::move(cfg))),
      params_(std::move(ckpt.params)),
      opt_(std::move(ckpt.optimizer)),
      step_(ckpt.step) {
  model_.validate();
  Rng root(cfg_.seed);
  noise_seed_ = root.derive("noise").seed();
  dropout_seed_ = root.derive("dropout").seed();
  // Reject parameter sets that do not match the model layout.
  Rng scratch(0);
  require(params_.same_layout(init_parameters<float>(model_, scratch)), ErrorKind::kShapeMismatch,
          "checkpoint parameters do not match the model config");
}

double Trainer::compute_loss(std::span<const TrainingExample> batch, ParameterSet<float>* grads,
                             StepResult* info) const {
  require(!batch.empty(), ErrorKind::kInvalidArgument, "training step: empty batch");
  if (grads != nullptr) grads->set_zero();
  Rng noise_rng = Rng(noise_seed_).derive(static_cast<std::uint64_t>(step_));
  Rng dropout_rng = Rng(dropout_seed_).derive(static_cast<std::uint64_t>(step_));
  ModelGraph<float> mg(model_, params_, grads, &dropout_rng);
  const bool mean = cfg_.loss_normalization == LossNormalization::kMean;
  Var total;
  double masked_total = 0.0;
  for (const auto& ex : batch) {
    const NoiseSample noise = sample_noise(noise_rng, ex.target, ex.history, step_, cfg_);
    masked_total += noise.mask_count;
    const Var loss = sample_loss(mg, std::span<const Sid>(ex.history), noise.masked, ex.target,
                                 noise.mask_count, mean);
    total = total.valid() ? mg.graph().add(total, loss) : loss;
  }
  total = mg.graph().scale(total, 1.0 / static_cast<double>(batch.size()));
  const double loss = static_cast<double>(mg.graph().value(total)[0]);
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << "non-finite training loss at step " << step_ << " (batch of " << batch.size() << ")";
    fail(ErrorKind::kNumericOverflow, msg.str());
  }
  if (grads != nullptr) mg.graph().backward(total);
  if (info != nullptr) {
    info->loss = loss;
    info->mean_mask_count = masked_total / static_cast<double>(batch.size());
  }
  return loss;
}

StepResult Trainer::step(std::span<const TrainingExample> batch) {
  ParameterSet<float> grads = params_.zeros_like();
  StepResult result;
  compute_loss(batch, &grads, &result);
  adam_step(params_, grads, opt_, cfg_.adam);
  ++step_;
  return result;
}

Checkpoint Trainer::checkpoint() const {
  return Checkpoint{model_, step_, params_, opt_};
}

std::vector<double> train_loop(Trainer& trainer, const std::vector<std::vector<int>>& sequences,
                               const std::vector<Sid>& item_sids, const TrainLoopOptions& options) {
  const TrainConfig& cfg = trainer.config();
  std::ofstream metrics;
  if (!options.metrics_path.empty()) {
    metrics.open(options.metrics_path,
                 trainer.current_step() == 0 ? std::ios::trunc : std::ios::app);
    require(static_cast<bool>(metrics), ErrorKind::kIo, "cannot write " + options.metrics_path);
  }
  std::vector<double> losses;
  if (trainer.current_step() >= cfg.steps) return losses;

  const int window = trainer.model_config().max_history + 1;
  // The batch order depends on the seed only; a resumed run skips the
  // batches already consumed.
  BatchIterator batches(sequences, window, cfg.batch_size, Rng(cfg.seed).derive("batches"));
  for (std::int64_t s = 0; s < trainer.current_step(); ++s) batches.next_batch();

  std::vector<TrainingExample> examples;
  while (trainer.current_step() < cfg.steps) {
    const auto pairs = batches.next_batch();
    examples.clear();
    for (const auto& pair : pairs) {
      TrainingExample ex;
      for (int item : pair.history) ex.history.push_back(item_sids.at(static_cast<std::size_t>(item)));
      ex.target = item_sids.at(static_cast<std::size_t>(pair.target));
      examples.push_back(std::move(ex));
    }
    const StepResult r = trainer.step(examples);
    losses.push_back(r.loss);
    const std::int64_t n = trainer.current_step();
    if (options.on_step) options.on_step(n, r.loss);

    nlohmann::json line = {{"step", n}, {"loss", r.loss}, {"mask_count", r.mean_mask_count}};
    const bool eval_now = options.validator && cfg.eval_interval > 0 &&
                          (n % cfg.eval_interval == 0 || n == cfg.steps);
    if (eval_now) {
      nlohmann::json eval = nlohmann::json::object();
      for (const auto& [key, value] : options.validator(trainer)) eval[key] = value;
      line["eval"] = eval;
    }
    if (metrics.is_open()) metrics << line.dump() << "\n";
  }
  return losses;
}

}  // namespace mdgr
