#include "mdgr/model.hpp"

#include <algorithm>
#include <string_view>

#include <json.hpp>

namespace mdgr {

void ModelConfig::validate() const {
  require(sid_length() >= 2, ErrorKind::kInvalidArgument, "model: SID length L must be >= 2");
  for (int v : vocab_sizes) {
    require(v >= 2, ErrorKind::kInvalidArgument, "model: every vocabulary needs >= 2 tokens");
  }
  require(hidden >= 1 && heads >= 1 && hidden % heads == 0, ErrorKind::kInvalidArgument,
          "model: hidden size " + std::to_string(hidden) + " not divisible by heads " +
              std::to_string(heads));
  require(encoder_layers >= 0 && decoder_layers >= 1, ErrorKind::kInvalidArgument,
          "model: need >= 0 encoder layers and >= 1 decoder layer");
  require(ffn_hidden >= 1, ErrorKind::kInvalidArgument, "model: ffn_hidden must be positive");
  require(max_history >= 1, ErrorKind::kInvalidArgument, "model: max_history must be >= 1");
  require(dropout >= 0.0 && dropout < 1.0, ErrorKind::kInvalidArgument,
          "model: dropout must lie in [0, 1)");
}

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json doc = {{"vocab_sizes", cfg.vocab_sizes},
                        {"hidden", cfg.hidden},
                        {"encoder_layers", cfg.encoder_layers},
                        {"decoder_layers", cfg.decoder_layers},
                        {"heads", cfg.heads},
                        {"ffn_hidden", cfg.ffn_hidden},
                        {"max_history", cfg.max_history},
                        {"dropout", cfg.dropout},
                        {"difficulty_embedding", cfg.difficulty_embedding}};
  return doc.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    ModelConfig cfg;
    cfg.vocab_sizes = doc.at("vocab_sizes").get<std::vector<int>>();
    cfg.hidden = doc.at("hidden").get<int>();
    cfg.encoder_layers = doc.at("encoder_layers").get<int>();
    cfg.decoder_layers = doc.at("decoder_layers").get<int>();
    cfg.heads = doc.at("heads").get<int>();
    cfg.ffn_hidden = doc.at("ffn_hidden").get<int>();
    cfg.max_history = doc.at("max_history").get<int>();
    cfg.dropout = doc.at("dropout").get<double>();
    cfg.difficulty_embedding = doc.at("difficulty_embedding").get<bool>();
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("model config: ") + e.what());
  }
}

namespace {

template <class T>
Tensor<T> gaussian(Shape shape, Rng& rng, double std) {
  Tensor<T> t(std::move(shape));
  for (T& v : t.values()) v = static_cast<T>(rng.normal() * std);
  return t;
}

template <class T>
void add_layer_norm(ParameterSet<T>& p, const std::string& prefix, int d) {
  p.add(prefix + ".g", Tensor<T>({d}, T{1}));
  p.add(prefix + ".b", Tensor<T>({d}, T{0}));
}

template <class T>
void add_attention(ParameterSet<T>& p, const std::string& prefix, int d, Rng& rng, double std) {
  // No key bias: it shifts every score of a query equally, which softmax
  // ignores, so its gradient is identically zero.
  for (const char* proj : {"q", "k", "v", "o"}) {
    p.add(prefix + ".w" + proj, gaussian<T>({d, d}, rng, std));
    if (std::string_view(proj) != "k") p.add(prefix + ".b" + proj, Tensor<T>({d}));
  }
}

template <class T>
void add_ffn(ParameterSet<T>& p, const std::string& prefix, int d, int ff, Rng& rng, double std) {
  p.add(prefix + ".w1", gaussian<T>({d, ff}, rng, std));
  p.add(prefix + ".b1", Tensor<T>({ff}));
  p.add(prefix + ".w2", gaussian<T>({ff, d}, rng, std));
  p.add(prefix + ".b2", Tensor<T>({d}));
}

}  // namespace

template <class T>
ParameterSet<T> init_parameters(const ModelConfig& cfg, Rng& rng, double init_std) {
  cfg.validate();
  const int d = cfg.hidden;
  const int L = cfg.sid_length();
  ParameterSet<T> p;
  for (int l = 0; l < L; ++l) {
    // Last row is this position's MASK embedding.
    p.add("tok." + std::to_string(l), gaussian<T>({cfg.vocab_sizes[l] + 1, d}, rng, init_std));
  }
  p.add("dec_pos", gaussian<T>({L, d}, rng, init_std));
  p.add("hist_pos", gaussian<T>({cfg.max_history, d}, rng, init_std));
  p.add("difficulty", gaussian<T>({L, d}, rng, init_std));
  for (int i = 0; i < cfg.encoder_layers; ++i) {
    const std::string pre = "enc." + std::to_string(i);
    add_layer_norm(p, pre + ".ln1", d);
    add_attention(p, pre + ".attn", d, rng, init_std);
    add_layer_norm(p, pre + ".ln2", d);
    add_ffn(p, pre + ".ffn", d, cfg.ffn_hidden, rng, init_std);
  }
  add_layer_norm(p, std::string("enc.ln_f"), d);
  for (int i = 0; i < cfg.decoder_layers; ++i) {
    const std::string pre = "dec." + std::to_string(i);
    add_layer_norm(p, pre + ".ln1", d);
    add_attention(p, pre + ".self", d, rng, init_std);
    add_layer_norm(p, pre + ".ln2", d);
    add_attention(p, pre + ".cross", d, rng, init_std);
    add_layer_norm(p, pre + ".ln3", d);
    add_ffn(p, pre + ".ffn", d, cfg.ffn_hidden, rng, init_std);
  }
  add_layer_norm(p, std::string("dec.ln_f"), d);
  for (int l = 0; l < L; ++l) {
    const std::string pre = "head." + std::to_string(l);
    p.add(pre + ".w", gaussian<T>({d, cfg.vocab_sizes[l]}, rng, init_std));
    p.add(pre + ".b", Tensor<T>({cfg.vocab_sizes[l]}));
  }
  return p;
}

template ParameterSet<float> init_parameters<float>(const ModelConfig&, Rng&, double);
template ParameterSet<double> init_parameters<double>(const ModelConfig&, Rng&, double);

template <class T>
ModelGraph<T>::ModelGraph(const ModelConfig& cfg, const ParameterSet<T>& params,
                          ParameterSet<T>* grads, Rng* dropout_rng)
    : cfg_(cfg), params_(params), grads_(grads), dropout_rng_(dropout_rng), graph_(grads != nullptr) {
  if (grads_ != nullptr) {
    require(params.same_layout(*grads_), ErrorKind::kShapeMismatch,
            "model graph: gradient buffers do not match parameters");
  }
}

template <class T>
Var ModelGraph<T>::param(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const Var v = graph_.param(params_[name], grads_ != nullptr ? &(*grads_)[name] : nullptr);
  bound_.emplace(name, v);
  return v;
}

template <class T>
Var ModelGraph<T>::maybe_dropout(Var x) {
  if (dropout_rng_ == nullptr || cfg_.dropout == 0.0) return x;
  return graph_.dropout(x, cfg_.dropout, *dropout_rng_);
}

template <class T>
Var ModelGraph<T>::layer_norm(Var x, const std::string& prefix) {
  return graph_.layer_norm(x, param(prefix + ".g"), param(prefix + ".b"));
}

template <class T>
Var ModelGraph<T>::self_attention(Var x, const std::string& prefix, int q_block) {
  const Var h = layer_norm(x, prefix + ".ln1");
  const std::string a = prefix + (prefix.starts_with("enc") ? ".attn" : ".self");
  const Var q = graph_.linear(h, param(a + ".wq"), param(a + ".bq"));
  const Var k = graph_.matmul(h, param(a + ".wk"));
  const Var v = graph_.linear(h, param(a + ".wv"), param(a + ".bv"));
  const Var att = graph_.attention(q, k, v, cfg_.heads, q_block, q_block);
  const Var out = graph_.linear(att, param(a + ".wo"), param(a + ".bo"));
  return graph_.add(x, maybe_dropout(out));
}

template <class T>
Var ModelGraph<T>::cross_attention(Var x, const std::string& prefix, Var keys, Var values) {
  const Var h = layer_norm(x, prefix + ".ln2");
  const std::string a = prefix + ".cross";
  const Var q = graph_.linear(h, param(a + ".wq"), param(a + ".bq"));
  const Var att = graph_.attention(q, keys, values, cfg_.heads);
  const Var out = graph_.linear(att, param(a + ".wo"), param(a + ".bo"));
  return graph_.add(x, maybe_dropout(out));
}

template <class T>
Var ModelGraph<T>::feed_forward(Var x, const std::string& prefix) {
  const bool decoder = prefix.starts_with("dec");
  const Var h = layer_norm(x, prefix + (decoder ? ".ln3" : ".ln2"));
  const std::string f = prefix + ".ffn";
  const Var inner = graph_.gelu(graph_.linear(h, param(f + ".w1"), param(f + ".b1")));
  const Var out = graph_.linear(inner, param(f + ".w2"), param(f + ".b2"));
  return graph_.add(x, maybe_dropout(out));
}

template <class T>
Var ModelGraph<T>::encode(std::span<const Sid> history) {
  require(!history.empty(), ErrorKind::kInvalidArgument,
          "encode_history: history must contain at least one interaction");
  const int L = cfg_.sid_length();
  const std::size_t keep = std::min<std::size_t>(history.size(), cfg_.max_history);
  const auto window = history.subspan(history.size() - keep);
  const int n = static_cast<int>(window.size());

  std::vector<Var> tables;
  for (int l = 0; l < L; ++l) tables.push_back(param("tok." + std::to_string(l)));
  const Var pos = param("hist_pos");
  std::vector<std::vector<typename Graph<T>::RowRef>> rows(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    const Sid& sid = window[static_cast<std::size_t>(j)];
    require(sid.length() == L, ErrorKind::kShapeMismatch,
            "encode_history: history SID of length " + std::to_string(sid.length()) +
                " for L=" + std::to_string(L));
    auto& refs = rows[static_cast<std::size_t>(j)];
    for (int l = 0; l < L; ++l) {
      require(sid[l] >= 0 && sid[l] < cfg_.vocab_sizes[l], ErrorKind::kOutOfRange,
              "encode_history: token " + std::to_string(sid[l]) + " outside vocabulary at " +
                  std::to_string(l));
      refs.push_back({tables[l], sid[l]});
    }
    // Position 0 is the most recent interaction.
    refs.push_back({pos, n - 1 - j});
  }
  Var x = maybe_dropout(graph_.embed_sum(rows));
  for (int i = 0; i < cfg_.encoder_layers; ++i) {
    const std::string pre = "enc." + std::to_string(i);
    x = self_attention(x, pre, 0);
    x = feed_forward(x, pre);
  }
  return layer_norm(x, "enc.ln_f");
}

template <class T>
Var ModelGraph<T>::embed_decoder(std::span<const MaskedSid> inputs,
                                 std::span<const int> difficulty) {
  const int L = cfg_.sid_length();
  require(inputs.size() == difficulty.size() && !inputs.empty(), ErrorKind::kShapeMismatch,
          "embed_decoder: one difficulty index per input required");
  std::vector<Var> tables;
  for (int l = 0; l < L; ++l) tables.push_back(param("tok." + std::to_string(l)));
  const Var pos = param("dec_pos");
  const std::optional<Var> diff =
      cfg_.difficulty_embedding ? std::optional<Var>(param("difficulty")) : std::nullopt;
  std::vector<std::vector<typename Graph<T>::RowRef>> rows;
  rows.reserve(inputs.size() * static_cast<std::size_t>(L));
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    const MaskedSid& in = inputs[b];
    require(in.length() == L, ErrorKind::kShapeMismatch,
            "embed_decoder: input of length " + std::to_string(in.length()) + " for L=" +
                std::to_string(L));
    const int k = difficulty[b];
    require(k >= 1 && k <= L, ErrorKind::kOutOfRange,
            "embed_decoder: difficulty index " + std::to_string(k) + " outside [1, " +
                std::to_string(L) + "]");
    for (int l = 0; l < L; ++l) {
      const int token = in.tokens[static_cast<std::size_t>(l)];
      require(token == kMaskToken || (token >= 0 && token < cfg_.vocab_sizes[l]),
              ErrorKind::kOutOfRange,
              "embed_decoder: token " + std::to_string(token) + " outside vocabulary at " +
                  std::to_string(l));
      const int row = token == kMaskToken ? cfg_.vocab_sizes[l] : token;
      std::vector<typename Graph<T>::RowRef> refs{{tables[l], row}, {pos, l}};
      if (diff) refs.push_back({*diff, k - 1});
      rows.push_back(std::move(refs));
    }
  }
  return maybe_dropout(graph_.embed_sum(rows));
}

template <class T>
typename ModelGraph<T>::MemoryCache ModelGraph<T>::cache_memory(Var memory) {
  MemoryCache cache;
  for (int i = 0; i < cfg_.decoder_layers; ++i) {
    const std::string a = "dec." + std::to_string(i) + ".cross";
    cache.keys.push_back(graph_.matmul(memory, param(a + ".wk")));
    cache.values.push_back(graph_.linear(memory, param(a + ".wv"), param(a + ".bv")));
  }
  return cache;
}

template <class T>
Var ModelGraph<T>::decode_hidden(Var embedded, int count, const MemoryCache& cache) {
  const int L = cfg_.sid_length();
  require(graph_.value(embedded).dim(0) == count * L, ErrorKind::kShapeMismatch,
          "decode_hidden: embedded rows do not match input count");
  Var x = embedded;
  for (int i = 0; i < cfg_.decoder_layers; ++i) {
    const std::string pre = "dec." + std::to_string(i);
    // Full bidirectional self-attention within each SID.
    x = self_attention(x, pre, L);
    x = cross_attention(x, pre, cache.keys[static_cast<std::size_t>(i)],
                        cache.values[static_cast<std::size_t>(i)]);
    x = feed_forward(x, pre);
  }
  return layer_norm(x, "dec.ln_f");
}

template <class T>
Var ModelGraph<T>::position_logits(Var hidden, int count, int position) {
  const int L = cfg_.sid_length();
  require(position >= 0 && position < L, ErrorKind::kOutOfRange,
          "position_logits: position " + std::to_string(position) + " outside SID");
  std::vector<int> rows;
  rows.reserve(static_cast<std::size_t>(count));
  for (int b = 0; b < count; ++b) rows.push_back(b * L + position);
  const Var selected = graph_.select_rows(hidden, rows);
  const std::string pre = "head." + std::to_string(position);
  return graph_.linear(selected, param(pre + ".w"), param(pre + ".b"));
}

template class ModelGraph<float>;
template class ModelGraph<double>;

template <class T>
HistoryEncoding<T> encode_history(std::span<const Sid> history, const ParameterSet<T>& params,
                                  const ModelConfig& cfg) {
  ModelGraph<T> mg(cfg, params);
  const Var memory = mg.encode(history);
  HistoryEncoding<T> out;
  out.memory = mg.graph().value(memory);
  out.valid_length = out.memory.dim(0);
  return out;
}

template <class T>
Tensor<T> embed_decoder_input(const MaskedSid& input, int difficulty,
                              const ParameterSet<T>& params, const ModelConfig& cfg) {
  ModelGraph<T> mg(cfg, params);
  const int k[] = {difficulty};
  return mg.graph().value(mg.embed_decoder(std::span<const MaskedSid>(&input, 1), k));
}

template <class T>
PositionLogits<T> denoise_forward(const MaskedSid& input, const HistoryEncoding<T>& memory,
                                  int difficulty, const ParameterSet<T>& params,
                                  const ModelConfig& cfg) {
  require(memory.memory.rank() == 2 && memory.memory.dim(1) == cfg.hidden,
          ErrorKind::kShapeMismatch,
          "denoise_forward: memory shape " + shape_string(memory.memory.shape()) +
              " for hidden size " + std::to_string(cfg.hidden));
  ModelGraph<T> mg(cfg, params);
  const Var mem = mg.graph().constant(memory.memory);
  const auto cache = mg.cache_memory(mem);
  const int k[] = {difficulty};
  const Var embedded = mg.embed_decoder(std::span<const MaskedSid>(&input, 1), k);
  const Var hidden = mg.decode_hidden(embedded, 1, cache);
  PositionLogits<T> out;
  for (int l = 0; l < cfg.sid_length(); ++l) {
    const auto& z = mg.graph().value(mg.position_logits(hidden, 1, l));
    out.emplace_back(z.values().begin(), z.values().end());
  }
  return out;
}

template <class T>
std::vector<double> position_log_probs(std::span<const T> logits) {
  return log_softmax<T>(logits);
}

template <class T>
Var sample_loss(ModelGraph<T>& mg, std::span<const Sid> history, const MaskedSid& masked,
                const Sid& target, int difficulty, bool mean_over_masked) {
  const int L = mg.config().sid_length();
  require(target.length() == L && masked.length() == L, ErrorKind::kShapeMismatch,
          "sample_loss: target/masked SID length differs from L");
  const auto positions = masked.mask_positions();
  require(!positions.empty(), ErrorKind::kInvalidArgument,
          "sample_loss: at least one masked position is required");
  const Var memory = mg.encode(history);
  const auto cache = mg.cache_memory(memory);
  const int k[] = {difficulty};
  const Var embedded = mg.embed_decoder(std::span<const MaskedSid>(&masked, 1), k);
  const Var hidden = mg.decode_hidden(embedded, 1, cache);
  Var total;
  for (int l : positions) {
    const int t[] = {target[l]};
    const Var ce = mg.graph().cross_entropy(mg.position_logits(hidden, 1, l), t);
    total = total.valid() ? mg.graph().add(total, ce) : ce;
  }
  if (mean_over_masked) {
    total = mg.graph().scale(total, 1.0 / static_cast<double>(positions.size()));
  }
  return total;
}

template <class T>
DenoiserSession<T>::DenoiserSession(const ModelConfig& cfg, const ParameterSet<T>& params,
                                    std::span<const Sid> history)
    : mg_(cfg, params) {
  cache_ = mg_.cache_memory(mg_.encode(history));
}

template <class T>
std::vector<PositionLogits<T>> DenoiserSession<T>::forward(std::span<const MaskedSid> inputs) {
  const int count = static_cast<int>(inputs.size());
  require(count >= 1, ErrorKind::kInvalidArgument, "denoiser session: no inputs");
  std::vector<int> difficulty;
  difficulty.reserve(inputs.size());
  for (const auto& in : inputs) difficulty.push_back(in.masked_count());
  const Var embedded = mg_.embed_decoder(inputs, difficulty);
  const Var hidden = mg_.decode_hidden(embedded, count, cache_);
  std::vector<PositionLogits<T>> out(inputs.size());
  const int L = mg_.config().sid_length();
  for (int l = 0; l < L; ++l) {
    const bool needed = std::any_of(inputs.begin(), inputs.end(),
                                    [l](const MaskedSid& in) { return in.is_masked(l); });
    if (!needed) {
      for (auto& logits : out) logits.emplace_back();
      continue;
    }
    const auto& z = mg_.graph().value(mg_.position_logits(hidden, count, l));
    for (int b = 0; b < count; ++b) {
      const auto r = z.row(b);
      out[static_cast<std::size_t>(b)].emplace_back(r.begin(), r.end());
    }
  }
  ++forward_calls_;
  return out;
}

template class DenoiserSession<float>;
template class DenoiserSession<double>;

#define MDGR_INSTANTIATE_MODEL(T)                                                              \
  template HistoryEncoding<T> encode_history<T>(std::span<const Sid>, const ParameterSet<T>&,  \
                                                const ModelConfig&);                           \
  template Tensor<T> embed_decoder_input<T>(const MaskedSid&, int, const ParameterSet<T>&,     \
                                            const ModelConfig&);                               \
  template PositionLogits<T> denoise_forward<T>(const MaskedSid&, const HistoryEncoding<T>&,   \
                                                int, const ParameterSet<T>&,                   \
                                                const ModelConfig&);                           \
  template std::vector<double> position_log_probs<T>(std::span<const T>);                      \
  template Var sample_loss<T>(ModelGraph<T>&, std::span<const Sid>, const MaskedSid&,          \
                              const Sid&, int, bool);

MDGR_INSTANTIATE_MODEL(float)
MDGR_INSTANTIATE_MODEL(double)

#undef MDGR_INSTANTIATE_MODEL

}  // namespace mdgr
