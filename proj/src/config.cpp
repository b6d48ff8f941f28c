#include "mdgr/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "mdgr/error.hpp"

namespace mdgr {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

long long parse_int(const std::string& key, const std::string& value) {
  long long out = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  require(ec == std::errc() && ptr == end, ErrorKind::kParse,
          "config key '" + key + "' expects an integer, got '" + value + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == value.size() && !value.empty(), ErrorKind::kParse,
          "config key '" + key + "' expects a number, got '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  fail(ErrorKind::kParse, "config key '" + key + "' expects true/false, got '" + value + "'");
}

std::string real_text(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // Shortest form that parses back to the same double.
  for (int prec = 1; prec <= 17; ++prec) {
    char shorter[64];
    std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
    if (std::stod(shorter) == v) return shorter;
  }
  return buf;
}

struct Entry {
  ConfigKey info;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class Field>
Entry int_entry(std::string key, std::string help, Field field) {
  return Entry{
      {key, "", std::move(help)},
      [field](RunConfig& c, const std::string& k, const std::string& v) {
        auto& ref = field(c);
        ref = static_cast<std::remove_reference_t<decltype(ref)>>(parse_int(k, v));
      },
      [field](const RunConfig& c) {
        return std::to_string(field(const_cast<RunConfig&>(c)));
      }};
}

template <class Field>
Entry real_entry(std::string key, std::string help, Field field) {
  return Entry{{key, "", std::move(help)},
               [field](RunConfig& c, const std::string& k, const std::string& v) {
                 field(c) = parse_real(k, v);
               },
               [field](const RunConfig& c) { return real_text(field(const_cast<RunConfig&>(c))); }};
}

template <class Field>
Entry bool_entry(std::string key, std::string help, Field field) {
  return Entry{{key, "", std::move(help)},
               [field](RunConfig& c, const std::string& k, const std::string& v) {
                 field(c) = parse_bool(k, v);
               },
               [field](const RunConfig& c) {
                 return std::string(field(const_cast<RunConfig&>(c)) ? "true" : "false");
               }};
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> t;
    t.push_back(int_entry("codebook.num_subspaces", "SID length L (number of sub-codebooks)",
                          [](RunConfig& c) -> int& { return c.codebook.num_subspaces; }));
    t.push_back(int_entry("codebook.vocab", "codewords per sub-codebook",
                          [](RunConfig& c) -> int& { return c.codebook.vocab_size; }));
    t.push_back(int_entry("codebook.iters", "k-means Lloyd iterations",
                          [](RunConfig& c) -> int& { return c.codebook.kmeans_iters; }));
    t.push_back(Entry{{"codebook.rotation", "", "random | identity"},
                      [](RunConfig& c, const std::string&, const std::string& v) {
                        c.codebook.rotation = parse_rotation_kind(v);
                      },
                      [](const RunConfig& c) { return to_string(c.codebook.rotation); }});

    t.push_back(int_entry("model.hidden", "hidden size d",
                          [](RunConfig& c) -> int& { return c.model.hidden; }));
    t.push_back(int_entry("model.encoder_layers", "history encoder layers",
                          [](RunConfig& c) -> int& { return c.model.encoder_layers; }));
    t.push_back(int_entry("model.decoder_layers", "denoising decoder layers",
                          [](RunConfig& c) -> int& { return c.model.decoder_layers; }));
    t.push_back(int_entry("model.heads", "attention heads",
                          [](RunConfig& c) -> int& { return c.model.heads; }));
    t.push_back(int_entry("model.ffn_hidden", "feed-forward inner size",
                          [](RunConfig& c) -> int& { return c.model.ffn_hidden; }));
    t.push_back(int_entry("model.max_history", "most recent items kept in the history",
                          [](RunConfig& c) -> int& { return c.model.max_history; }));
    t.push_back(real_entry("model.dropout", "dropout rate in training",
                           [](RunConfig& c) -> double& { return c.model.dropout; }));

    t.push_back(real_entry("curriculum.gamma", "stretch exponent of the difficulty schedule",
                           [](RunConfig& c) -> double& { return c.train.curriculum.gamma; }));
    t.push_back(int_entry("curriculum.total_steps", "schedule length N; 0 = train.steps",
                          [](RunConfig& c) -> std::int64_t& {
                            return c.train.curriculum.total_steps;
                          }));
    t.push_back(real_entry("masking.epsilon", "smoothing of history-aware position weights",
                           [](RunConfig& c) -> double& { return c.train.mask_epsilon; }));

    t.push_back(int_entry("train.batch_size", "samples per step",
                          [](RunConfig& c) -> int& { return c.train.batch_size; }));
    t.push_back(int_entry("train.steps", "optimizer steps",
                          [](RunConfig& c) -> std::int64_t& { return c.train.steps; }));
    t.push_back(real_entry("train.lr", "Adam learning rate",
                           [](RunConfig& c) -> double& { return c.train.adam.lr; }));
    t.push_back(real_entry("train.beta1", "Adam beta1",
                           [](RunConfig& c) -> double& { return c.train.adam.beta1; }));
    t.push_back(real_entry("train.beta2", "Adam beta2",
                           [](RunConfig& c) -> double& { return c.train.adam.beta2; }));
    t.push_back(real_entry("train.eps", "Adam epsilon",
                           [](RunConfig& c) -> double& { return c.train.adam.eps; }));
    t.push_back(int_entry("train.eval_interval", "validation every n steps; 0 = never",
                          [](RunConfig& c) -> std::int64_t& { return c.train.eval_interval; }));
    t.push_back(Entry{{"train.loss_normalization", "", "sum | mean over masked positions"},
                      [](RunConfig& c, const std::string&, const std::string& v) {
                        c.train.loss_normalization = parse_loss_normalization(v);
                      },
                      [](const RunConfig& c) { return to_string(c.train.loss_normalization); }});
    t.push_back(bool_entry("train.random_quantity", "ablation: uniform mask count",
                           [](RunConfig& c) -> bool& { return c.train.random_quantity; }));
    t.push_back(bool_entry("train.random_positions", "ablation: uniform mask positions",
                           [](RunConfig& c) -> bool& { return c.train.random_positions; }));
    t.push_back(bool_entry("train.vanilla_mask", "ablation: uniform count and positions",
                           [](RunConfig& c) -> bool& { return c.train.vanilla_mask; }));
    t.push_back(bool_entry("train.no_difficulty_vector", "ablation: no difficulty embedding",
                           [](RunConfig& c) -> bool& { return c.train.no_difficulty_vector; }));

    t.push_back(int_entry("decode.warmup_steps", "R_warm: single-position steps",
                          [](RunConfig& c) -> int& { return c.decode.warmup_steps; }));
    t.push_back(int_entry("decode.parallel_positions", "m_par: positions per later step",
                          [](RunConfig& c) -> int& { return c.decode.parallel_positions; }));
    t.push_back(int_entry("decode.beam_width", "B: beams kept per step",
                          [](RunConfig& c) -> int& { return c.decode.beam_width; }));
    t.push_back(int_entry("decode.max_steps", "hard cap on decoding steps",
                          [](RunConfig& c) -> int& { return c.decode.max_steps; }));
    t.push_back(bool_entry("decode.random_position_selection",
                           "ablation: uniform instead of confidence-ordered positions",
                           [](RunConfig& c) -> bool& { return c.decode.random_position_selection; }));

    t.push_back(int_entry("eval.min_interactions", "drop users with fewer interactions",
                          [](RunConfig& c) -> int& { return c.eval.min_interactions; }));
    t.push_back(int_entry("eval.max_users", "evaluate at most this many users; 0 = all",
                          [](RunConfig& c) -> int& { return c.eval.max_users; }));
    t.push_back(int_entry("eval.validation_users", "users scored at each validation",
                          [](RunConfig& c) -> int& { return c.eval.validation_users; }));
    t.push_back(int_entry("eval.benchmark_users", "timed users per benchmark cell",
                          [](RunConfig& c) -> int& { return c.eval.benchmark_users; }));
    t.push_back(int_entry("eval.benchmark_warmup_users", "untimed users per benchmark cell",
                          [](RunConfig& c) -> int& { return c.eval.benchmark_warmup_users; }));

    const RunConfig defaults;
    for (auto& e : t) e.info.default_value = e.get(defaults);
    return t;
  }();
  return table;
}

const Entry& find_entry(const std::string& key) {
  for (const auto& e : entries()) {
    if (e.info.key == key) return e;
  }
  fail(ErrorKind::kInvalidArgument, "unknown config key '" + key + "'");
}

}  // namespace

std::vector<ConfigKey> config_keys() {
  std::vector<ConfigKey> out;
  for (const auto& e : entries()) out.push_back(e.info);
  return out;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  find_entry(key).set(cfg, key, value);
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) {
  return find_entry(key).get(cfg);
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    try {
      require(eq != std::string::npos, ErrorKind::kParse, "expected 'key = value'");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      require(!key.empty(), ErrorKind::kParse, "missing key before '='");
      set_config_value(base, key, value);
    } catch (const Error& e) {
      throw Error(e.kind(), "config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot read config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config(buf.str(), std::move(base));
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

std::string config_to_text(const RunConfig& cfg) {
  std::ostringstream out;
  for (const auto& e : entries()) out << e.info.key << " = " << e.get(cfg) << "\n";
  return out.str();
}

RunConfig full_scale_config() {
  RunConfig cfg;
  cfg.codebook.num_subspaces = 8;
  cfg.codebook.vocab_size = 300;
  cfg.model.hidden = 256;
  cfg.model.encoder_layers = 6;
  cfg.model.decoder_layers = 6;
  cfg.model.heads = 8;
  cfg.model.ffn_hidden = 1024;
  return cfg;
}

}  // namespace mdgr
