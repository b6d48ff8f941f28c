#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mdgr/autodiff.hpp"
#include "mdgr/params.hpp"
#include "mdgr/rng.hpp"
#include "mdgr/sid.hpp"

namespace mdgr {

struct ModelConfig {
  std::vector<int> vocab_sizes;  // |V_l| per SID position; L = size
  int hidden = 64;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int heads = 4;
  int ffn_hidden = 256;
  // Sequences capped at 20 with two held-out items give training histories
  // of at most 17; longer test histories would hit untrained positions.
  int max_history = 16;
  double dropout = 0.0;
  // When false the difficulty table is neither added nor trained.
  bool difficulty_embedding = true;

  int sid_length() const { return static_cast<int>(vocab_sizes.size()); }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

// Weights ~ N(0, init_std); layer-norm gains 1, biases 0.
template <class T>
ParameterSet<T> init_parameters(const ModelConfig& cfg, Rng& rng, double init_std = 0.02);

// Encoder output for one user: T' x d memory rows.
template <class T>
struct HistoryEncoding {
  Tensor<T> memory;
  int valid_length = 0;
};

// Logits per SID position; entry l has |V_l| values.
template <class T>
using PositionLogits = std::vector<std::vector<T>>;

// Binds a ParameterSet into a Graph. Parameters are registered lazily, so
// only weights that participate in the computation appear on the tape.
template <class T>
class ModelGraph {
 public:
  ModelGraph(const ModelConfig& cfg, const ParameterSet<T>& params,
             ParameterSet<T>* grads = nullptr, Rng* dropout_rng = nullptr);

  Graph<T>& graph() { return graph_; }
  const ModelConfig& config() const { return cfg_; }
  Var param(const std::string& name);

  // Memory rows for the most recent max_history items of `history`.
  Var encode(std::span<const Sid> history);

  // Row (b * L + l) = token-or-MASK embedding + position embedding +
  // difficulty row D[difficulty[b] - 1].
  Var embed_decoder(std::span<const MaskedSid> inputs, std::span<const int> difficulty);

  // Cross-attention keys/values for every decoder layer, computed once per
  // memory and reused across decoding steps.
  struct MemoryCache {
    std::vector<Var> keys;
    std::vector<Var> values;
  };
  MemoryCache cache_memory(Var memory);

  // Decoder stack over `count` stacked inputs; returns the final normalized
  // hidden rows [count * L, d].
  Var decode_hidden(Var embedded, int count, const MemoryCache& cache);

  // Logits [count, |V_l|] for one position across all stacked inputs.
  Var position_logits(Var hidden, int count, int position);

 private:
  Var layer_norm(Var x, const std::string& prefix);
  Var self_attention(Var x, const std::string& prefix, int q_block);
  Var cross_attention(Var x, const std::string& prefix, Var keys, Var values);
  Var feed_forward(Var x, const std::string& prefix);
  Var maybe_dropout(Var x);

  const ModelConfig& cfg_;
  const ParameterSet<T>& params_;
  ParameterSet<T>* grads_;
  Rng* dropout_rng_;
  Graph<T> graph_;
  std::map<std::string, Var> bound_;
};

// Single-user evaluation helpers (eval mode, no gradient recording).
template <class T>
HistoryEncoding<T> encode_history(std::span<const Sid> history, const ParameterSet<T>& params,
                                  const ModelConfig& cfg);

template <class T>
Tensor<T> embed_decoder_input(const MaskedSid& input, int difficulty,
                              const ParameterSet<T>& params, const ModelConfig& cfg);

template <class T>
PositionLogits<T> denoise_forward(const MaskedSid& input, const HistoryEncoding<T>& memory,
                                  int difficulty, const ParameterSet<T>& params,
                                  const ModelConfig& cfg);

// log softmax over one position's logits, computed in double.
template <class T>
std::vector<double> position_log_probs(std::span<const T> logits);

// Masked denoising loss for one training sample:
// -sum_{l in M} log p(target[l] | masked, history, d_k), optionally divided
// by |M|. Returns the loss node on the model graph.
template <class T>
Var sample_loss(ModelGraph<T>& mg, std::span<const Sid> history, const MaskedSid& masked,
                const Sid& target, int difficulty, bool mean_over_masked);

// Batched inference over a fixed user history. Every call to `forward` is one
// decoder invocation regardless of how many inputs are stacked.
template <class T>
class DenoiserSession {
 public:
  DenoiserSession(const ModelConfig& cfg, const ParameterSet<T>& params,
                  std::span<const Sid> history);

  // Difficulty index per input = its masked-position count. Logits are left
  // empty for positions that no input has masked.
  std::vector<PositionLogits<T>> forward(std::span<const MaskedSid> inputs);

  int forward_calls() const noexcept { return forward_calls_; }

 private:
  ModelGraph<T> mg_;
  typename ModelGraph<T>::MemoryCache cache_;
  int forward_calls_ = 0;
};

extern template class ModelGraph<float>;
extern template class ModelGraph<double>;
extern template class DenoiserSession<float>;
extern template class DenoiserSession<double>;

}  // namespace mdgr
