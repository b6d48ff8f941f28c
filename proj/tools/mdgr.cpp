// Command-line entry point: synth, quantize, train, decode, eval, benchmark.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mdgr/checkpoint.hpp"
#include "mdgr/codebook.hpp"
#include "mdgr/config.hpp"
#include "mdgr/data.hpp"
#include "mdgr/decoder.hpp"
#include "mdgr/error.hpp"
#include "mdgr/eval.hpp"
#include "mdgr/pipeline.hpp"
#include "mdgr/trainer.hpp"

namespace fs = std::filesystem;
using namespace mdgr;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Raised for problems the caller can fix on the command line.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int report_error(const std::string& category, const std::string& kind, const std::string& message,
                 int code) {
  nlohmann::json line = {{"error", category}, {"kind", kind}, {"message", message}};
  std::cerr << line.dump() << std::endl;
  return code;
}

class RunDir {
 public:
  explicit RunDir(fs::path dir) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
    log_.open(dir_ / "log.txt", std::ios::app);
  }
  fs::path path(const std::string& name) const { return dir_ / name; }
  void write(const std::string& name, const std::string& text) const {
    std::ofstream out(path(name));
    require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path(name).string());
    out << text;
  }
  void log(const std::string& message) {
    std::cout << message << std::endl;
    log_ << message << std::endl;
  }

 private:
  fs::path dir_;
  std::ofstream log_;
};

void require_file(const std::string& flag, const std::string& path) {
  if (path.empty()) throw UsageError(flag + " is required");
  if (!fs::is_regular_file(path)) throw UsageError(flag + " file not found: " + path);
}

InteractionLog load_log_for_index(const std::string& path, const InverseIndex& index) {
  return load_interactions(path, [&](const std::string& id) { return index.contains_item(id); });
}

struct Global {
  std::string out_dir = "run";
  std::string config_path;
  std::uint64_t seed = 0;
  bool full_scale = false;
  std::vector<std::string> overrides;
};

RunConfig build_config(const Global& g) {
  RunConfig cfg = g.full_scale ? full_scale_config() : RunConfig{};
  try {
    if (!g.config_path.empty()) {
      require_file("--config", g.config_path);
      cfg = load_config(g.config_path, cfg);
    }
    for (const auto& kv : g.overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
      auto trim = [](std::string s) {
        s.erase(0, s.find_first_not_of(' '));
        s.erase(s.find_last_not_of(' ') + 1);
        return s;
      };
      set_config_value(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

void write_json(RunDir& run, const std::string& name, const nlohmann::json& doc) {
  run.write(name, doc.dump(2) + "\n");
}

struct SynthArgs {
  int users = 1000, items = 256, attrs = 4, vocab = 16, dim_per_attr = 16;
  int min_len = 5, max_len = 20;
  double noise = 0.05;
  std::string mode = "deterministic-next";
};

int run_synth(const Global& g, const RunConfig& cfg, const SynthArgs& a) {
  RunDir run(g.out_dir);
  run.write("config.txt", config_to_text(cfg));
  SynthOptions o;
  o.users = a.users;
  o.items = a.items;
  o.attributes = a.attrs;
  o.vocab = a.vocab;
  o.dim_per_attribute = a.dim_per_attr;
  o.min_length = a.min_len;
  o.max_length = a.max_len;
  o.noise = a.noise;
  o.mode = parse_synth_mode(a.mode);
  o.seed = Rng(g.seed).derive("synth").seed();
  const auto data = generate_synthetic(o);
  save_items(data.catalog, run.path("items.jsonl").string());
  save_interactions(data.log, run.path("interactions.jsonl").string());
  write_json(run, "synth.json",
             {{"users", o.users}, {"items", o.items}, {"attrs", o.attributes},
              {"vocab", o.vocab}, {"dim_per_attr", o.dim_per_attribute}, {"mode", a.mode},
              {"noise", o.noise}, {"seed", g.seed}});
  run.log("synth: wrote " + std::to_string(o.items) + " items and " + std::to_string(o.users) +
          " users to " + g.out_dir);
  return 0;
}

int run_quantize(const Global& g, const RunConfig& cfg, const std::string& items_path) {
  require_file("--items", items_path);
  RunDir run(g.out_dir);
  run.write("config.txt", config_to_text(cfg));
  const auto catalog = load_items(items_path);
  Rng rng = Rng(g.seed).derive("codebook");
  const auto q = quantize_catalog(catalog, cfg.codebook, rng);
  save_codebook(q.codebook, run.path("codebook.json").string());
  save_inverse_index(q.index, run.path("index.jsonl").string());
  const auto stats = collision_stats(q.index);
  write_json(run, "quantize.json",
             {{"items", stats.items}, {"distinct_sids", stats.distinct_sids},
              {"max_bucket", stats.max_bucket}, {"mean_bucket", stats.mean_bucket},
              {"collision_rate", stats.collision_rate}});
  run.log("quantize: " + std::to_string(stats.items) + " items -> " +
          std::to_string(stats.distinct_sids) + " distinct SIDs");
  return 0;
}

struct TrainArgs {
  std::string codebook, index, interactions, resume;
  long long steps = -1;
};

int run_train(const Global& g, RunConfig cfg, const TrainArgs& a) {
  require_file("--codebook", a.codebook);
  require_file("--index", a.index);
  require_file("--interactions", a.interactions);
  if (!a.resume.empty()) require_file("--resume", a.resume);
  if (a.steps >= 0) cfg.train.steps = a.steps;
  cfg.train.seed = Rng(g.seed).derive("train").seed();
  cfg.decode.seed = Rng(g.seed).derive("decode").seed();

  RunDir run(g.out_dir);
  run.write("config.txt", config_to_text(cfg));
  const auto codebook = load_codebook(a.codebook);
  const auto index = load_inverse_index(a.index);
  const auto log = load_log_for_index(a.interactions, index);
  const auto data = prepare_training_data(log, index, cfg.eval.min_interactions);
  require(!data.sequences.empty(), ErrorKind::kInvalidArgument,
          "train: no user has a training prefix of two or more items");

  const ModelConfig model = model_for_codebook(cfg.model, codebook);
  Trainer trainer = a.resume.empty() ? Trainer(model, cfg.train)
                                     : Trainer(load_checkpoint(a.resume), cfg.train);
  require(trainer.model_config().vocab_sizes == model.vocab_sizes, ErrorKind::kShapeMismatch,
          "train: checkpoint vocabulary does not match the codebook");

  TrainLoopOptions options;
  options.metrics_path = run.path("metrics.jsonl").string();
  if (cfg.train.eval_interval > 0) {
    options.validator = make_validator(index, validation_queries(data.split), cfg.decode,
                                       cfg.eval.validation_users);
  }
  const std::int64_t log_every = std::max<std::int64_t>(1, cfg.train.steps / 20);
  options.on_step = [&](std::int64_t n, double loss) {
    if (n % log_every == 0 || n == cfg.train.steps) {
      char buf[96];
      std::snprintf(buf, sizeof(buf), "train: step %lld loss %.4f", static_cast<long long>(n),
                    loss);
      run.log(buf);
    }
  };
  const auto losses = train_loop(trainer, data.sequences, data.item_sids, options);
  save_checkpoint(trainer.checkpoint(), run.path("checkpoint.bin").string());
  write_json(run, "train.json",
             {{"steps", trainer.current_step()},
              {"first_loss", losses.empty() ? nlohmann::json(nullptr) : nlohmann::json(losses.front())},
              {"final_loss", losses.empty() ? nlohmann::json(nullptr) : nlohmann::json(losses.back())},
              {"training_sequences", data.sequences.size()},
              {"parameters", trainer.params().scalar_count()}});
  run.log("train: checkpoint at step " + std::to_string(trainer.current_step()) + " written to " +
          run.path("checkpoint.bin").string());
  return 0;
}

struct ModelArgs {
  std::string checkpoint, index, interactions;
  int k = 10;
  int users = -1;
};

struct LoadedModel {
  Checkpoint ckpt;
  InverseIndex index;
  InteractionLog log;
};

LoadedModel load_model_inputs(const ModelArgs& a) {
  require_file("--checkpoint", a.checkpoint);
  require_file("--index", a.index);
  require_file("--interactions", a.interactions);
  LoadedModel m{load_checkpoint(a.checkpoint), load_inverse_index(a.index), {}};
  m.log = load_log_for_index(a.interactions, m.index);
  require(m.index.sid_length() == m.ckpt.config.sid_length(), ErrorKind::kShapeMismatch,
          "index SID length does not match the checkpoint model");
  return m;
}

DecodeConfig decode_config(const Global& g, const RunConfig& cfg) {
  DecodeConfig d = cfg.decode;
  d.seed = Rng(g.seed).derive("decode").seed();
  return d;
}

int run_decode(const Global& g, const RunConfig& cfg, const ModelArgs& a) {
  if (a.k < 1) throw UsageError("--k must be >= 1");
  auto m = load_model_inputs(a);
  RunDir run(g.out_dir);
  run.write("config.txt", config_to_text(cfg));
  const DecodeConfig dcfg = decode_config(g, cfg);
  std::ofstream out(run.path("recommendations.jsonl"));
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write recommendations.jsonl");
  std::size_t done = 0;
  for (std::size_t u = 0; u < m.log.size(); ++u) {
    if (a.users >= 0 && done >= static_cast<std::size_t>(a.users)) break;
    if (m.log.sequences[u].empty()) continue;
    const auto rec = recommend(m.ckpt.config, m.ckpt.params, m.index, m.log.sequences[u], dcfg, a.k);
    nlohmann::json sids = nlohmann::json::array();
    nlohmann::json scores = nlohmann::json::array();
    for (const auto& b : rec.decoded.beams) {
      sids.push_back(b.partial.tokens);
      scores.push_back(b.score);
    }
    out << nlohmann::json{{"user_id", m.log.users[u]},
                          {"items", rec.items},
                          {"sids", sids},
                          {"scores", scores}}
               .dump()
        << "\n";
    ++done;
  }
  run.log("decode: wrote recommendations for " + std::to_string(done) + " users");
  return 0;
}

std::vector<EvalQuery> eval_queries(const LoadedModel& m, const RunConfig& cfg, int users) {
  const auto kept =
      filter_min_interactions(m.log, static_cast<std::size_t>(cfg.eval.min_interactions));
  auto queries = test_queries(leave_one_out_split(kept.users, kept.sequences));
  if (users >= 0 && static_cast<std::size_t>(users) < queries.size()) {
    queries.resize(static_cast<std::size_t>(users));
  }
  return queries;
}

int run_eval(const Global& g, const RunConfig& cfg, const ModelArgs& a) {
  const auto m = load_model_inputs(a);
  RunDir run(g.out_dir);
  run.write("config.txt", config_to_text(cfg));
  const int users = a.users >= 0 ? a.users : (cfg.eval.max_users > 0 ? cfg.eval.max_users : -1);
  const auto queries = eval_queries(m, cfg, users);
  const auto report =
      evaluate_model(m.ckpt.config, m.ckpt.params, m.index, queries, decode_config(g, cfg));
  run.write("eval.json", metric_report_json(report) + "\n");
  const auto table = metric_report_table(report);
  run.write("eval.txt", table);
  run.log(table);
  return 0;
}

int run_benchmark(const Global& g, const RunConfig& cfg, const ModelArgs& a) {
  const auto m = load_model_inputs(a);
  RunDir run(g.out_dir);
  run.write("config.txt", config_to_text(cfg));
  const int users = a.users >= 0 ? a.users : cfg.eval.benchmark_users;
  const auto queries = eval_queries(m, cfg, users);
  BenchmarkOptions options;
  options.warmup_users = cfg.eval.benchmark_warmup_users;
  options.beam_width = cfg.decode.beam_width;
  const auto grid = step_count_grid();
  const auto rows = benchmark_decoding(m.ckpt.config, m.ckpt.params, m.index, queries, grid, options);
  run.write("benchmark.json", benchmark_json(rows) + "\n");
  run.write("benchmark.csv", benchmark_csv(rows));
  const auto table = benchmark_table(rows);
  run.write("benchmark.txt", table);
  run.log(table);
  return 0;
}

std::string kind_name(ErrorKind kind) { return std::string(to_string(kind)); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked-diffusion generative recommendation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  Global g;
  app.add_option("--out-dir", g.out_dir, "Run output directory");
  app.add_option("--config", g.config_path, "Flat key = value config file");
  app.add_option("--seed", g.seed, "Root random seed");
  app.add_flag("--paper-scale", g.full_scale, "Start from the large model/codebook preset");
  app.add_option("--set", g.overrides, "Config override key=value (repeatable)");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic catalog and interaction log");
  synth_cmd->add_option("--users", synth.users)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--items", synth.items)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--attrs", synth.attrs)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--vocab", synth.vocab)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--dim-per-attr", synth.dim_per_attr)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--min-len", synth.min_len)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--max-len", synth.max_len)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--noise", synth.noise)->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--mode", synth.mode)
      ->check(CLI::IsMember({"deterministic-next", "preference"}));

  std::string items_path;
  auto* quantize_cmd = app.add_subcommand("quantize", "Fit codebooks and build the SID index");
  quantize_cmd->add_option("--items", items_path, "Item embeddings JSONL")->required();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train the denoiser");
  train_cmd->add_option("--codebook", train.codebook)->required();
  train_cmd->add_option("--index", train.index)->required();
  train_cmd->add_option("--interactions", train.interactions)->required();
  train_cmd->add_option("--steps", train.steps, "Overrides train.steps")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--resume", train.resume, "Checkpoint to continue from");

  ModelArgs model_args;
  auto add_model_args = [&](CLI::App* cmd) {
    cmd->add_option("--checkpoint", model_args.checkpoint)->required();
    cmd->add_option("--index", model_args.index)->required();
    cmd->add_option("--interactions", model_args.interactions)->required();
    cmd->add_option("--users", model_args.users, "Limit on users (default: all)");
  };
  auto* decode_cmd = app.add_subcommand("decode", "Recommend the next items for every user");
  add_model_args(decode_cmd);
  decode_cmd->add_option("--k", model_args.k, "Items per user");
  auto* eval_cmd = app.add_subcommand("eval", "Leave-one-out Recall/NDCG");
  add_model_args(eval_cmd);
  auto* bench_cmd = app.add_subcommand("benchmark", "Decoding steps vs throughput over the R_warm/m_par grid");
  add_model_args(bench_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", "parse", e.what(), kExitUsage);
  }

  try {
    const RunConfig cfg = build_config(g);
    if (*synth_cmd) return run_synth(g, cfg, synth);
    if (*quantize_cmd) return run_quantize(g, cfg, items_path);
    if (*train_cmd) return run_train(g, cfg, train);
    if (*decode_cmd) return run_decode(g, cfg, model_args);
    if (*eval_cmd) return run_eval(g, cfg, model_args);
    if (*bench_cmd) return run_benchmark(g, cfg, model_args);
  } catch (const UsageError& e) {
    return report_error("usage", "argument", e.what(), kExitUsage);
  } catch (const Error& e) {
    return report_error("runtime", kind_name(e.kind()), e.what(), kExitRuntime);
  } catch (const std::exception& e) {
    return report_error("runtime", "internal", e.what(), kExitRuntime);
  }
  return kExitUsage;
}
