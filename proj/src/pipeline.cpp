#include "mdgr/pipeline.hpp"

#include <map>

#include "mdgr/error.hpp"

namespace mdgr {

QuantizedCatalog quantize_catalog(const ItemCatalog& catalog, const CodebookOptions& options,
                                  Rng& rng) {
  require(!catalog.empty(), ErrorKind::kInvalidArgument, "quantize: the item catalog is empty");
  QuantizedCatalog out;
  out.codebook = fit_codebooks(catalog.embedding_matrix(), options, rng);
  ItemEmbeddings items;
  items.reserve(catalog.size());
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    items.emplace_back(catalog.ids()[i], catalog.embedding(i));
  }
  out.index = InverseIndex::build(items, out.codebook);
  return out;
}

TrainingData prepare_training_data(const InteractionLog& log, const InverseIndex& index,
                                   int min_interactions) {
  const InteractionLog kept =
      filter_min_interactions(log, static_cast<std::size_t>(std::max(min_interactions, 0)));
  TrainingData data;
  data.split = leave_one_out_split(kept.users, kept.sequences);
  std::map<std::string, int> ids;
  auto id_of = [&](const std::string& item) {
    auto [it, inserted] = ids.emplace(item, static_cast<int>(data.items.size()));
    if (inserted) {
      data.items.push_back(item);
      data.item_sids.push_back(index.sid_of(item));
    }
    return it->second;
  };
  for (const auto& user : data.split.users) {
    std::vector<int> seq;
    for (const auto& item : user.train) seq.push_back(id_of(item));
    // Test-time histories must map to SIDs as well.
    id_of(user.validation);
    id_of(user.test);
    if (seq.size() >= 2) data.sequences.push_back(std::move(seq));
  }
  return data;
}

Validator make_validator(const InverseIndex& index, std::vector<EvalQuery> queries,
                         DecodeConfig decode, int users) {
  if (users >= 0 && static_cast<std::size_t>(users) < queries.size()) {
    queries.resize(static_cast<std::size_t>(users));
  }
  return [&index, queries = std::move(queries), decode](const Trainer& trainer) {
    const auto report =
        evaluate_model(trainer.model_config(), trainer.params(), index, queries, decode);
    return std::map<std::string, double>{{"recall@5", report.recall5},
                                         {"recall@10", report.recall10},
                                         {"ndcg@5", report.ndcg5},
                                         {"ndcg@10", report.ndcg10}};
  };
}

ModelConfig model_for_codebook(ModelConfig model, const CodebookSet& codebook) {
  model.vocab_sizes = codebook.vocab_sizes();
  return model;
}

Trainer train_model(const RunConfig& cfg, const CodebookSet& codebook, const TrainingData& data,
                    const TrainLoopOptions& options) {
  Trainer trainer(model_for_codebook(cfg.model, codebook), cfg.train);
  require(!data.sequences.empty(), ErrorKind::kInvalidArgument,
          "train: no user has a training prefix of two or more items");
  train_loop(trainer, data.sequences, data.item_sids, options);
  return trainer;
}

}  // namespace mdgr
