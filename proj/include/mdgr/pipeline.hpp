#pragma once

#include <string>
#include <vector>

#include "mdgr/codebook.hpp"
#include "mdgr/config.hpp"
#include "mdgr/data.hpp"
#include "mdgr/eval.hpp"
#include "mdgr/trainer.hpp"

namespace mdgr {

struct QuantizedCatalog {
  CodebookSet codebook;
  InverseIndex index;
};

QuantizedCatalog quantize_catalog(const ItemCatalog& catalog, const CodebookOptions& options,
                                  Rng& rng);

// Leave-one-out split of the filtered log plus the training sequences
// (train prefixes as indices into item_sids).
struct TrainingData {
  EvalSplit split;
  std::vector<std::string> items;
  std::vector<Sid> item_sids;
  std::vector<std::vector<int>> sequences;
};

TrainingData prepare_training_data(const InteractionLog& log, const InverseIndex& index,
                                   int min_interactions);

// Validation metrics on the first `users` validation queries.
Validator make_validator(const InverseIndex& index, std::vector<EvalQuery> queries,
                         DecodeConfig decode, int users);

// Trains a fresh model on `data` with the run config; returns the trainer.
Trainer train_model(const RunConfig& cfg, const CodebookSet& codebook, const TrainingData& data,
                    const TrainLoopOptions& options = {});

// Model config with the codebook's vocabulary sizes filled in.
ModelConfig model_for_codebook(ModelConfig model, const CodebookSet& codebook);

}  // namespace mdgr
