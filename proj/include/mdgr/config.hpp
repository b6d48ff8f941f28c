#pragma once

#include <string>
#include <vector>

#include "mdgr/codebook.hpp"
#include "mdgr/decoder.hpp"
#include "mdgr/model.hpp"
#include "mdgr/trainer.hpp"

namespace mdgr {

struct EvalConfig {
  int min_interactions = 5;  // users below this are dropped before splitting
  int max_users = 0;         // 0 = every user
  int validation_users = 100;
  int benchmark_users = 200;
  int benchmark_warmup_users = 10;
};

// Every tunable of a run. The model's vocabulary sizes come from the
// codebook, so `model.vocab_sizes` is filled in once a codebook is known.
struct RunConfig {
  CodebookOptions codebook;
  ModelConfig model;
  TrainConfig train;
  DecodeConfig decode;
  EvalConfig eval;
};

struct ConfigKey {
  std::string key;
  std::string default_value;
  std::string help;
};

// All keys with their defaults, in output order.
std::vector<ConfigKey> config_keys();

// Applies `key = value` lines on top of `base`. '#' starts a comment; blank
// lines are ignored. Unknown keys and bad values are errors naming the line.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::string& path, RunConfig base = {});

// Sets one key; used by the parser and by command-line overrides.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& cfg, const std::string& key);

// The effective config as `key = value` lines, one per known key.
std::string config_to_text(const RunConfig& cfg);

// Larger model and codebook matching the published setting: 8 codebooks of
// 300 codewords, hidden size 256, 6 layers.
RunConfig full_scale_config();

}  // namespace mdgr
