#pragma once

#include <span>
#include <string>
#include <vector>

#include "mdgr/codebook.hpp"
#include "mdgr/decoder.hpp"
#include "mdgr/model.hpp"

namespace mdgr {

struct UserSplit {
  std::string user;
  std::vector<std::string> train;
  std::string validation;
  std::string test;
};

struct EvalSplit {
  std::vector<UserSplit> users;
};

// Test = last interaction, validation = second to last, train = the rest.
// Users with fewer than 3 interactions are left out. `timestamps`, when
// given, must be non-decreasing per user.
EvalSplit leave_one_out_split(const std::vector<std::string>& users,
                              const std::vector<std::vector<std::string>>& sequences,
                              const std::vector<std::vector<double>>& timestamps = {});

double recall_at_k(std::span<const std::string> ranked, const std::string& target, int k);
double ndcg_at_k(std::span<const std::string> ranked, const std::string& target, int k);

struct MetricReport {
  double recall1 = 0.0;
  double recall5 = 0.0;
  double recall10 = 0.0;
  double ndcg5 = 0.0;
  double ndcg10 = 0.0;
  std::size_t users = 0;
};

std::string metric_report_json(const MetricReport& report);
std::string metric_report_table(const MetricReport& report);

// One evaluation query: history item ids and the held-out target.
struct EvalQuery {
  std::string user;
  std::vector<std::string> history;
  std::string target;
};

// Test queries (history = train + validation) or validation queries
// (history = train) of a split.
std::vector<EvalQuery> test_queries(const EvalSplit& split);
std::vector<EvalQuery> validation_queries(const EvalSplit& split);

// Ranked item list for one history: decode with B = max(beam_width, k),
// then map SIDs to items.
struct Recommendation {
  std::vector<std::string> items;
  DecodeResult decoded;
};
Recommendation recommend(const ModelConfig& model, const ParameterSet<float>& params,
                         const InverseIndex& index, std::span<const std::string> history,
                         const DecodeConfig& cfg, int k);

MetricReport evaluate_model(const ModelConfig& model, const ParameterSet<float>& params,
                            const InverseIndex& index, std::span<const EvalQuery> queries,
                            const DecodeConfig& cfg);

struct BenchmarkRow {
  int warmup_steps = 0;
  int parallel_positions = 0;
  int total_steps = 0;
  int measured_steps = 0;  // forward calls per user, from the session counter
  double seconds = 0.0;
  double qps = 0.0;
  double recall10 = 0.0;
};

// The seven (R_warm, m_par) settings of the step-count study.
std::vector<std::pair<int, int>> step_count_grid();

struct BenchmarkOptions {
  int warmup_users = 10;
  int beam_width = 50;
};

// Times decoding of every query per grid cell. measured_steps is checked to
// be the same for every user and reported.
std::vector<BenchmarkRow> benchmark_decoding(const ModelConfig& model,
                                             const ParameterSet<float>& params,
                                             const InverseIndex& index,
                                             std::span<const EvalQuery> queries,
                                             std::span<const std::pair<int, int>> grid,
                                             const BenchmarkOptions& options = {});

std::string benchmark_json(std::span<const BenchmarkRow> rows);
std::string benchmark_table(std::span<const BenchmarkRow> rows);
std::string benchmark_csv(std::span<const BenchmarkRow> rows);

}  // namespace mdgr
