#include "mdgr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "mdgr/error.hpp"

namespace mdgr {

namespace {

std::string padded(char prefix, std::size_t value, std::size_t count) {
  const std::size_t width = std::to_string(count > 0 ? count - 1 : 0).size();
  std::string digits = std::to_string(value);
  return std::string(1, prefix) + std::string(width - std::min(width, digits.size()), '0') + digits;
}

template <class Fn>
void for_each_jsonl(const std::string& path, Fn&& fn) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot read " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      fail(ErrorKind::kParse, path + ":" + std::to_string(line_no) + ": malformed JSON line");
    }
    try {
      fn(doc, line_no);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kParse, path + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.kind(), path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

}  // namespace

void ItemCatalog::add(std::string id, std::vector<float> embedding, std::vector<int> attributes) {
  require(!index_.contains(id), ErrorKind::kInvalidArgument, "duplicate item id '" + id + "'");
  require(!embedding.empty(), ErrorKind::kInvalidArgument, "item '" + id + "' has no embedding");
  if (ids_.empty()) {
    dim_ = static_cast<int>(embedding.size());
  }
  require(static_cast<int>(embedding.size()) == dim_, ErrorKind::kShapeMismatch,
          "item '" + id + "' has embedding dimension " + std::to_string(embedding.size()) +
              ", expected " + std::to_string(dim_));
  for (float v : embedding) {
    require(std::isfinite(v), ErrorKind::kInvalidArgument,
            "item '" + id + "' has a non-finite embedding value");
  }
  index_.emplace(id, ids_.size());
  ids_.push_back(std::move(id));
  embeddings_.push_back(std::move(embedding));
  attributes_.push_back(std::move(attributes));
}

std::size_t ItemCatalog::index_of(const std::string& id) const {
  auto it = index_.find(id);
  require(it != index_.end(), ErrorKind::kOutOfRange, "unknown item id '" + id + "'");
  return it->second;
}

Tensor<float> ItemCatalog::embedding_matrix() const {
  require(!ids_.empty(), ErrorKind::kInvalidArgument, "item catalog is empty");
  Tensor<float> out({static_cast<int>(ids_.size()), dim_});
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    std::copy(embeddings_[i].begin(), embeddings_[i].end(), out.row(static_cast<int>(i)).begin());
  }
  return out;
}

ItemCatalog load_items(const std::string& path) {
  ItemCatalog catalog;
  for_each_jsonl(path, [&](const nlohmann::json& doc, int) {
    std::vector<int> attributes;
    if (doc.contains("attributes")) attributes = doc.at("attributes").get<std::vector<int>>();
    catalog.add(doc.at("item_id").get<std::string>(),
                doc.at("embedding").get<std::vector<float>>(), std::move(attributes));
  });
  return catalog;
}

void save_items(const ItemCatalog& catalog, const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path);
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    nlohmann::json line = {{"item_id", catalog.ids()[i]}, {"embedding", catalog.embedding(i)}};
    if (!catalog.attributes(i).empty()) line["attributes"] = catalog.attributes(i);
    out << line.dump() << "\n";
  }
}

InteractionLog load_interactions(const std::string& path, const ItemCatalog& catalog) {
  return load_interactions(path, [&](const std::string& id) { return catalog.contains(id); });
}

InteractionLog load_interactions(const std::string& path,
                                 const std::function<bool(const std::string&)>& known_item) {
  InteractionLog log;
  std::set<std::string> users;
  for_each_jsonl(path, [&](const nlohmann::json& doc, int) {
    auto user = doc.at("user_id").get<std::string>();
    auto items = doc.at("items").get<std::vector<std::string>>();
    require(!users.contains(user), ErrorKind::kInvalidArgument,
            "duplicate user id '" + user + "'");
    for (const auto& item : items) {
      require(known_item(item), ErrorKind::kOutOfRange,
              "interaction references unknown item '" + item + "'");
    }
    users.insert(user);
    log.add(std::move(user), std::move(items));
  });
  return log;
}

void save_interactions(const InteractionLog& log, const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path);
  for (std::size_t u = 0; u < log.size(); ++u) {
    nlohmann::json line = {{"user_id", log.users[u]}, {"items", log.sequences[u]}};
    out << line.dump() << "\n";
  }
}

InteractionLog filter_min_interactions(const InteractionLog& log, std::size_t min_interactions) {
  InteractionLog out;
  for (std::size_t u = 0; u < log.size(); ++u) {
    if (log.sequences[u].size() >= min_interactions) out.add(log.users[u], log.sequences[u]);
  }
  return out;
}

SynthMode parse_synth_mode(const std::string& text) {
  if (text == "deterministic-next") return SynthMode::kDeterministicNext;
  if (text == "preference") return SynthMode::kPreference;
  fail(ErrorKind::kInvalidArgument, "unknown synthetic mode '" + text + "'");
}

std::string to_string(SynthMode mode) {
  return mode == SynthMode::kDeterministicNext ? "deterministic-next" : "preference";
}

SyntheticData generate_synthetic(const SynthOptions& o) {
  require(o.users > 0 && o.items > 0 && o.attributes > 0 && o.vocab > 0 &&
              o.dim_per_attribute > 0,
          ErrorKind::kInvalidArgument, "generate_synthetic: sizes must be positive");
  require(o.min_length >= 2 && o.max_length >= o.min_length, ErrorKind::kInvalidArgument,
          "generate_synthetic: need 2 <= min_length <= max_length");
  Rng root(o.seed);
  Rng anchor_rng = root.derive("anchors");
  Rng item_rng = root.derive("items");
  Rng user_rng = root.derive("users");

  // anchors[a][v] is a unit vector of length dim_per_attribute. When the
  // vocabulary fits, anchors are mutually orthogonal.
  const int dpa = o.dim_per_attribute;
  std::vector<std::vector<std::vector<double>>> anchors(static_cast<std::size_t>(o.attributes));
  for (auto& per_attr : anchors) {
    for (int v = 0; v < o.vocab; ++v) {
      std::vector<double> a(static_cast<std::size_t>(dpa));
      for (double& x : a) x = anchor_rng.normal();
      if (v < dpa) {
        for (int pass = 0; pass < 2; ++pass) {
          for (const auto& prev : per_attr) {
            double proj = 0.0;
            for (int c = 0; c < dpa; ++c) proj += a[c] * prev[c];
            for (int c = 0; c < dpa; ++c) a[c] -= proj * prev[c];
          }
        }
      }
      double norm = 0.0;
      for (double x : a) norm += x * x;
      norm = std::sqrt(norm);
      for (double& x : a) x /= norm;
      per_attr.push_back(std::move(a));
    }
  }

  // Distinct attribute tuples while the label space allows it.
  double space = 1.0;
  for (int a = 0; a < o.attributes; ++a) space *= o.vocab;
  const bool distinct = space >= static_cast<double>(o.items);
  std::set<std::vector<int>> used;
  SyntheticData out;
  for (int i = 0; i < o.items; ++i) {
    std::vector<int> labels(static_cast<std::size_t>(o.attributes));
    do {
      for (int& l : labels) l = static_cast<int>(item_rng.uniform_int(o.vocab));
    } while (distinct && used.contains(labels));
    used.insert(labels);
    std::vector<float> embedding;
    embedding.reserve(static_cast<std::size_t>(o.attributes) * dpa);
    for (int a = 0; a < o.attributes; ++a) {
      for (double x : anchors[a][labels[a]]) {
        embedding.push_back(static_cast<float>(x + o.noise * item_rng.normal()));
      }
    }
    out.catalog.add(padded('i', i, o.items), std::move(embedding), std::move(labels));
  }

  std::vector<std::size_t> perm(static_cast<std::size_t>(o.items));
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  item_rng.shuffle(perm);
  out.successor = perm;

  for (int u = 0; u < o.users; ++u) {
    Rng rng = user_rng.derive(static_cast<std::uint64_t>(u));
    const int length =
        o.min_length + static_cast<int>(rng.uniform_int(o.max_length - o.min_length + 1));
    std::vector<double> weights;
    if (o.mode == SynthMode::kPreference) {
      // Two favored labels per attribute; item weight is the product.
      std::vector<std::vector<double>> affinity(static_cast<std::size_t>(o.attributes),
                                                std::vector<double>(o.vocab, 0.05));
      for (auto& aff : affinity) {
        aff[rng.uniform_int(o.vocab)] += 1.0;
        aff[rng.uniform_int(o.vocab)] += 0.5;
      }
      weights.resize(static_cast<std::size_t>(o.items));
      for (int i = 0; i < o.items; ++i) {
        double w = 1.0;
        const auto& labels = out.catalog.attributes(i);
        for (int a = 0; a < o.attributes; ++a) w *= affinity[a][labels[a]];
        weights[i] = w;
      }
    }
    std::vector<std::string> seq;
    std::size_t current = o.mode == SynthMode::kPreference
                              ? rng.categorical(weights)
                              : static_cast<std::size_t>(rng.uniform_int(o.items));
    seq.push_back(out.catalog.ids()[current]);
    for (int t = 1; t < length; ++t) {
      if (o.mode == SynthMode::kDeterministicNext || rng.uniform() < o.follow_probability) {
        current = perm[current];
      } else {
        current = rng.categorical(weights);
      }
      seq.push_back(out.catalog.ids()[current]);
    }
    out.log.add(padded('u', u, o.users), std::move(seq));
  }
  return out;
}

std::vector<TrainingPair> sliding_window_pairs(const std::vector<std::vector<int>>& sequences,
                                               int window) {
  require(window >= 2, ErrorKind::kInvalidArgument, "sliding window must be >= 2");
  std::vector<TrainingPair> pairs;
  for (const auto& seq : sequences) {
    for (std::size_t j = 1; j < seq.size(); ++j) {
      const std::size_t start = j > static_cast<std::size_t>(window - 1) ? j - (window - 1) : 0;
      pairs.push_back(TrainingPair{std::vector<int>(seq.begin() + start, seq.begin() + j), seq[j]});
    }
  }
  return pairs;
}

BatchIterator::BatchIterator(const std::vector<std::vector<int>>& sequences, int window,
                             int batch_size, Rng rng)
    : pairs_(sliding_window_pairs(sequences, window)), batch_size_(batch_size), rng_(rng) {
  require(batch_size >= 1, ErrorKind::kInvalidArgument, "batch size must be >= 1");
  require(!pairs_.empty(), ErrorKind::kInvalidArgument,
          "batch iterator: no (history, next) pairs in the interaction log");
  reshuffle();
}

void BatchIterator::reshuffle() {
  order_.resize(pairs_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  rng_.shuffle(order_);
  cursor_ = 0;
}

std::vector<TrainingPair> BatchIterator::next_batch() {
  std::vector<TrainingPair> batch;
  batch.reserve(static_cast<std::size_t>(batch_size_));
  while (static_cast<int>(batch.size()) < batch_size_) {
    if (cursor_ == order_.size()) {
      ++epoch_;
      reshuffle();
    }
    batch.push_back(pairs_[order_[cursor_++]]);
  }
  return batch;
}

}  // namespace mdgr
