#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mdgr/rng.hpp"
#include "mdgr/tensor.hpp"

namespace mdgr {

// Item id -> embedding, in file order. Attributes are only present for
// synthetic catalogs (one latent label per attribute).
class ItemCatalog {
 public:
  void add(std::string id, std::vector<float> embedding, std::vector<int> attributes = {});

  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }
  int dim() const noexcept { return dim_; }
  bool contains(const std::string& id) const { return index_.contains(id); }
  std::size_t index_of(const std::string& id) const;

  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::vector<float>& embedding(std::size_t i) const { return embeddings_[i]; }
  const std::vector<int>& attributes(std::size_t i) const { return attributes_[i]; }

  // n x d matrix of all embeddings.
  Tensor<float> embedding_matrix() const;

 private:
  std::vector<std::string> ids_;
  std::vector<std::vector<float>> embeddings_;
  std::vector<std::vector<int>> attributes_;
  std::map<std::string, std::size_t> index_;
  int dim_ = 0;
};

// User id -> chronologically ordered item ids, in file order.
struct InteractionLog {
  std::vector<std::string> users;
  std::vector<std::vector<std::string>> sequences;

  std::size_t size() const noexcept { return users.size(); }
  void add(std::string user, std::vector<std::string> items) {
    users.push_back(std::move(user));
    sequences.push_back(std::move(items));
  }
};

ItemCatalog load_items(const std::string& path);
void save_items(const ItemCatalog& catalog, const std::string& path);

// Every referenced item must exist in `catalog`.
InteractionLog load_interactions(const std::string& path, const ItemCatalog& catalog);
InteractionLog load_interactions(const std::string& path,
                                 const std::function<bool(const std::string&)>& known_item);
void save_interactions(const InteractionLog& log, const std::string& path);

// Users with fewer than `min_interactions` events are dropped.
InteractionLog filter_min_interactions(const InteractionLog& log, std::size_t min_interactions);

enum class SynthMode { kDeterministicNext, kPreference };
SynthMode parse_synth_mode(const std::string& text);
std::string to_string(SynthMode mode);

struct SynthOptions {
  int users = 1000;
  int items = 256;
  int attributes = 4;
  int vocab = 16;
  int dim_per_attribute = 16;
  int min_length = 5;
  int max_length = 20;
  double noise = 0.05;
  // Preference mode: probability that the next item is the deterministic
  // successor of the previous one rather than a preference draw.
  double follow_probability = 0.5;
  SynthMode mode = SynthMode::kDeterministicNext;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  ItemCatalog catalog;
  InteractionLog log;
  // successor[i]: the item that deterministically follows item i.
  std::vector<std::size_t> successor;
};

// Items carry `attributes` latent labels; the embedding is the concatenation
// of per-attribute anchor vectors plus N(0, noise^2) per coordinate.
SyntheticData generate_synthetic(const SynthOptions& options);

struct TrainingPair {
  std::vector<int> history;
  int target = 0;
  friend bool operator==(const TrainingPair&, const TrainingPair&) = default;
  friend auto operator<=>(const TrainingPair&, const TrainingPair&) = default;
};

// All sliding-window (prefix, next) pairs of the sequences, histories cut to
// the most recent window - 1 items.
std::vector<TrainingPair> sliding_window_pairs(const std::vector<std::vector<int>>& sequences,
                                               int window);

// Shuffled pass over the sliding-window pairs; each epoch emits every pair
// once and reshuffles on wrap-around.
class BatchIterator {
 public:
  BatchIterator(const std::vector<std::vector<int>>& sequences, int window, int batch_size,
                Rng rng);

  std::vector<TrainingPair> next_batch();
  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t pairs_per_epoch() const noexcept { return pairs_.size(); }

 private:
  void reshuffle();

  std::vector<TrainingPair> pairs_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
  int batch_size_;
  Rng rng_;
};

}  // namespace mdgr
