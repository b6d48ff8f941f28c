#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "mdgr/checkpoint.hpp"
#include "mdgr/pipeline.hpp"

namespace mdgr {
namespace {

namespace fs = std::filesystem;

struct Fixture {
  CodebookSet codebook;
  InverseIndex index;
  TrainingData data;
};

const Fixture& synthetic(int users) {
  static std::map<int, Fixture> cache;
  auto it = cache.find(users);
  if (it != cache.end()) return it->second;
  SynthOptions so;
  so.users = users;
  so.items = 64;
  so.vocab = 8;
  so.seed = 5;
  const auto synth = generate_synthetic(so);
  CodebookOptions co;
  co.vocab_size = 8;
  co.rotation = RotationKind::kIdentity;
  Rng rng(1);
  auto q = quantize_catalog(synth.catalog, co, rng);
  Fixture f{std::move(q.codebook), std::move(q.index), {}};
  f.data = prepare_training_data(synth.log, f.index, 5);
  return cache.emplace(users, std::move(f)).first->second;
}

RunConfig small_run(std::int64_t steps) {
  RunConfig cfg;
  cfg.model.hidden = 32;
  cfg.model.encoder_layers = 1;
  cfg.model.decoder_layers = 1;
  cfg.model.heads = 2;
  cfg.model.ffn_hidden = 64;
  cfg.train.steps = steps;
  cfg.train.batch_size = 16;
  cfg.train.seed = 3;
  return cfg;
}

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mdgr_test_trainer_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TEST(Noise, AlwaysMasksSomething) {
  TrainConfig cfg;
  cfg.curriculum.total_steps = 10000;
  Rng rng(1);
  const Sid target{{1, 2, 3, 4}};
  const std::vector<Sid> history{Sid{{1, 2, 0, 0}}, Sid{{1, 0, 3, 0}}};
  for (std::int64_t step = 0; step < 10000; ++step) {
    const auto noise = sample_noise(rng, target, history, step, cfg);
    ASSERT_GE(noise.mask_count, 1);
    ASSERT_EQ(noise.masked.masked_count(), noise.mask_count);
  }
}

TEST(Noise, VanillaMaskIsUniform) {
  TrainConfig cfg;
  cfg.vanilla_mask = true;
  cfg.curriculum.total_steps = 100;
  Rng rng(2);
  const Sid target{{1, 2, 3, 4}};
  // Skewed frequencies must not matter.
  const std::vector<Sid> history{Sid{{1, 2, 3, 0}}, Sid{{1, 2, 0, 0}}};
  const int n = 100000;
  std::vector<int> counts(5, 0), positions(4, 0);
  for (int i = 0; i < n; ++i) {
    const auto noise = sample_noise(rng, target, history, 0, cfg);
    ++counts[noise.mask_count];
    for (int p : noise.masked.mask_positions()) ++positions[p];
  }
  for (int k = 1; k <= 4; ++k) EXPECT_NEAR(counts[k] / static_cast<double>(n), 0.25, 0.02);
  const double masked = std::accumulate(positions.begin(), positions.end(), 0.0);
  for (int p = 0; p < 4; ++p) EXPECT_NEAR(positions[p] / masked, 0.25, 0.02);
}

TEST(Noise, EmptyHistoryIsAnError) {
  Rng rng(3);
  EXPECT_THROW(sample_noise(rng, Sid{{1, 2}}, std::vector<Sid>{}, 0, TrainConfig{}), Error);
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.mask_epsilon = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_EQ(parse_loss_normalization("mean"), LossNormalization::kMean);
  EXPECT_THROW(parse_loss_normalization("max"), Error);
}

TEST(Trainer, ComputeLossLeavesParamsAlone) {
  const auto& f = synthetic(50);
  const auto cfg = small_run(10);
  Trainer trainer(model_for_codebook(cfg.model, f.codebook), cfg.train);
  const auto before = trainer.params();
  std::vector<TrainingExample> batch{{{f.data.item_sids[0]}, f.data.item_sids[1]}};
  auto grads = trainer.params().zeros_like();
  const double a = trainer.compute_loss(batch, &grads);
  const double b = trainer.compute_loss(batch, nullptr);
  EXPECT_EQ(a, b);
  EXPECT_EQ(trainer.params(), before);
  EXPECT_EQ(trainer.current_step(), 0);
}

TEST(Trainer, LossDecreases) {
  const auto& f = synthetic(1000);
  auto cfg = small_run(400);
  cfg.train.adam.lr = 3e-3;
  // The curriculum raises the mask count over the run; compare per-token loss.
  cfg.train.loss_normalization = LossNormalization::kMean;
  const Trainer trainer = train_model(cfg, f.codebook, f.data);
  EXPECT_EQ(trainer.current_step(), 400);
  Trainer fresh(model_for_codebook(cfg.model, f.codebook), cfg.train);
  std::vector<double> losses;
  TrainLoopOptions options;
  options.on_step = [&](std::int64_t, double loss) { losses.push_back(loss); };
  train_loop(fresh, f.data.sequences, f.data.item_sids, options);
  ASSERT_EQ(losses.size(), 400u);
  // Averages over 25 steps so the check is about progress, not noise.
  const double head = std::accumulate(losses.begin(), losses.begin() + 25, 0.0) / 25;
  const double tail = std::accumulate(losses.end() - 25, losses.end(), 0.0) / 25;
  EXPECT_LT(tail, head - 0.1);
  EXPECT_EQ(fresh.params(), trainer.params());
}

std::vector<double> run_losses(const Fixture& f, const RunConfig& cfg) {
  Trainer trainer(model_for_codebook(cfg.model, f.codebook), cfg.train);
  return train_loop(trainer, f.data.sequences, f.data.item_sids, {});
}

TEST(Trainer, SameSeedSameLosses) {
  const auto& f = synthetic(100);
  const auto cfg = small_run(15);
  EXPECT_EQ(run_losses(f, cfg), run_losses(f, cfg));
  auto other = cfg;
  other.train.seed = 4;
  EXPECT_NE(run_losses(f, cfg), run_losses(f, other));
}

TEST(Trainer, NoDifficultyVectorLeavesTableUntouched) {
  const auto& f = synthetic(100);
  auto cfg = small_run(5);
  cfg.train.no_difficulty_vector = true;
  Trainer trainer(model_for_codebook(cfg.model, f.codebook), cfg.train);
  EXPECT_FALSE(trainer.model_config().difficulty_embedding);
  const auto before = trainer.params()["difficulty"];
  train_loop(trainer, f.data.sequences, f.data.item_sids, {});
  EXPECT_EQ(trainer.params()["difficulty"], before);
}

TEST(Trainer, MetricsFile) {
  const auto& f = synthetic(100);
  auto cfg = small_run(6);
  cfg.train.eval_interval = 3;
  const auto dir = temp_dir("metrics");
  Trainer trainer(model_for_codebook(cfg.model, f.codebook), cfg.train);
  TrainLoopOptions options;
  options.metrics_path = (dir / "metrics.jsonl").string();
  int validations = 0;
  options.validator = [&](const Trainer&) {
    ++validations;
    return std::map<std::string, double>{{"recall@5", 0.5}};
  };
  train_loop(trainer, f.data.sequences, f.data.item_sids, options);
  std::ifstream in(options.metrics_path);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    ++n;
    EXPECT_EQ(j["step"].get<int>(), n);
    EXPECT_TRUE(std::isfinite(j["loss"].get<double>()));
    EXPECT_EQ(j.contains("eval"), n % 3 == 0);
  }
  EXPECT_EQ(n, 6);
  EXPECT_EQ(validations, 2);
  fs::remove_all(dir);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto& f = synthetic(50);
  const auto cfg = small_run(3);
  Trainer trainer(model_for_codebook(cfg.model, f.codebook), cfg.train);
  train_loop(trainer, f.data.sequences, f.data.item_sids, {});
  const auto dir = temp_dir("roundtrip");
  const auto path = (dir / "ckpt.bin").string();
  save_checkpoint(trainer.checkpoint(), path);
  EXPECT_EQ(load_checkpoint(path), trainer.checkpoint());
  fs::remove_all(dir);
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
  const auto& f = synthetic(100);
  const auto full_cfg = small_run(12);
  Trainer straight(model_for_codebook(full_cfg.model, f.codebook), full_cfg.train);
  const auto straight_losses = train_loop(straight, f.data.sequences, f.data.item_sids, {});

  auto first_cfg = full_cfg;
  first_cfg.train.steps = 5;
  first_cfg.train.curriculum.total_steps = 12;
  Trainer first(model_for_codebook(first_cfg.model, f.codebook), first_cfg.train);
  auto losses = train_loop(first, f.data.sequences, f.data.item_sids, {});
  const auto dir = temp_dir("resume");
  const auto path = (dir / "ckpt.bin").string();
  save_checkpoint(first.checkpoint(), path);

  Trainer resumed(load_checkpoint(path), full_cfg.train);
  EXPECT_EQ(resumed.current_step(), 5);
  EXPECT_EQ(stretched_difficulty(resumed.current_step(), resumed.config().curriculum),
            stretched_difficulty(5, straight.config().curriculum));
  const auto rest = train_loop(resumed, f.data.sequences, f.data.item_sids, {});
  losses.insert(losses.end(), rest.begin(), rest.end());
  EXPECT_EQ(losses, straight_losses);
  EXPECT_EQ(resumed.params(), straight.params());
  EXPECT_EQ(resumed.optimizer(), straight.optimizer());
  fs::remove_all(dir);
}

void expect_format_error(const std::string& path) {
  try {
    load_checkpoint(path);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kFormat) << e.what();
  }
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  const auto& f = synthetic(50);
  const auto cfg = small_run(1);
  Trainer trainer(model_for_codebook(cfg.model, f.codebook), cfg.train);
  const auto dir = temp_dir("corrupt");
  const auto path = (dir / "ckpt.bin").string();
  save_checkpoint(trainer.checkpoint(), path);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
  };

  std::string bad = bytes;
  bad[0] = 'X';
  write(bad);
  expect_format_error(path);

  bad = bytes;
  bad[4] = static_cast<char>(kCheckpointVersion + 1);
  write(bad);
  expect_format_error(path);

  write(bytes.substr(0, bytes.size() / 2));
  expect_format_error(path);

  write(bytes + "x");
  expect_format_error(path);

  EXPECT_THROW(load_checkpoint((dir / "missing.bin").string()), Error);
  fs::remove_all(dir);
}

TEST(Checkpoint, MismatchedModelIsRejected) {
  const auto& f = synthetic(50);
  const auto cfg = small_run(1);
  Trainer trainer(model_for_codebook(cfg.model, f.codebook), cfg.train);
  auto ckpt = trainer.checkpoint();
  ckpt.config.hidden = 16;
  EXPECT_THROW(Trainer(ckpt, cfg.train), Error);
}

}  // namespace
}  // namespace mdgr
