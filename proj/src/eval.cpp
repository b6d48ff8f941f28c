#include "mdgr/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "mdgr/error.hpp"

namespace mdgr {

EvalSplit leave_one_out_split(const std::vector<std::string>& users,
                              const std::vector<std::vector<std::string>>& sequences,
                              const std::vector<std::vector<double>>& timestamps) {
  require(users.size() == sequences.size(), ErrorKind::kShapeMismatch,
          "leave_one_out_split: users and sequences differ in length");
  require(timestamps.empty() || timestamps.size() == sequences.size(), ErrorKind::kShapeMismatch,
          "leave_one_out_split: timestamps and sequences differ in length");
  EvalSplit split;
  for (std::size_t u = 0; u < users.size(); ++u) {
    const auto& seq = sequences[u];
    if (!timestamps.empty()) {
      const auto& ts = timestamps[u];
      require(ts.size() == seq.size(), ErrorKind::kShapeMismatch,
              "leave_one_out_split: user '" + users[u] + "' has mismatched timestamps");
      require(std::is_sorted(ts.begin(), ts.end()), ErrorKind::kInvalidArgument,
              "leave_one_out_split: interactions of user '" + users[u] +
                  "' are not in chronological order");
    }
    if (seq.size() < 3) continue;
    UserSplit s;
    s.user = users[u];
    s.train.assign(seq.begin(), seq.end() - 2);
    s.validation = seq[seq.size() - 2];
    s.test = seq.back();
    split.users.push_back(std::move(s));
  }
  return split;
}

namespace {

int rank_of(std::span<const std::string> ranked, const std::string& target, int k) {
  require(k >= 1, ErrorKind::kInvalidArgument, "metric cutoff K must be >= 1");
  const auto n = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < n; ++i) {
    if (ranked[i] == target) return static_cast<int>(i) + 1;
  }
  return 0;
}

}  // namespace

double recall_at_k(std::span<const std::string> ranked, const std::string& target, int k) {
  return rank_of(ranked, target, k) > 0 ? 1.0 : 0.0;
}

double ndcg_at_k(std::span<const std::string> ranked, const std::string& target, int k) {
  const int rank = rank_of(ranked, target, k);
  return rank > 0 ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

std::string metric_report_json(const MetricReport& r) {
  nlohmann::json doc = {{"recall@1", r.recall1}, {"recall@5", r.recall5},
                        {"recall@10", r.recall10}, {"ndcg@5", r.ndcg5},
                        {"ndcg@10", r.ndcg10},     {"users", r.users}};
  return doc.dump(2);
}

std::string metric_report_table(const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "%-8s %9s %9s %9s %9s %9s\n%-8zu %9.4f %9.4f %9.4f %9.4f %9.4f\n", "users", "R@1",
                "R@5", "R@10", "N@5", "N@10", r.users, r.recall1, r.recall5, r.recall10, r.ndcg5,
                r.ndcg10);
  return buf;
}

std::vector<EvalQuery> test_queries(const EvalSplit& split) {
  std::vector<EvalQuery> out;
  for (const auto& u : split.users) {
    EvalQuery q{u.user, u.train, u.test};
    q.history.push_back(u.validation);
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<EvalQuery> validation_queries(const EvalSplit& split) {
  std::vector<EvalQuery> out;
  for (const auto& u : split.users) out.push_back(EvalQuery{u.user, u.train, u.validation});
  return out;
}

namespace {

std::vector<Sid> history_sids(const InverseIndex& index, std::span<const std::string> history) {
  std::vector<Sid> out;
  out.reserve(history.size());
  for (const auto& item : history) out.push_back(index.sid_of(item));
  return out;
}

std::vector<Sid> ranked_sids(const DecodeResult& decoded) {
  std::vector<Sid> out;
  for (const auto& b : decoded.beams) out.push_back(b.partial.to_sid());
  return out;
}

}  // namespace

Recommendation recommend(const ModelConfig& model, const ParameterSet<float>& params,
                         const InverseIndex& index, std::span<const std::string> history,
                         const DecodeConfig& cfg, int k) {
  require(index.item_count() > 0, ErrorKind::kState, "recommend: the inverse index is empty");
  DecodeConfig wide = cfg;
  wide.beam_width = std::max(cfg.beam_width, k);
  const auto sids = history_sids(index, history);
  Recommendation rec;
  rec.decoded = decode_topB(model, params, sids, wide);
  const auto ranked = ranked_sids(rec.decoded);
  rec.items = sids_to_items(ranked, index, k);
  return rec;
}

MetricReport evaluate_model(const ModelConfig& model, const ParameterSet<float>& params,
                            const InverseIndex& index, std::span<const EvalQuery> queries,
                            const DecodeConfig& cfg) {
  require(index.item_count() > 0, ErrorKind::kState, "evaluate: the inverse index is empty");
  MetricReport report;
  for (const auto& q : queries) {
    const auto rec = recommend(model, params, index, q.history, cfg, 10);
    report.recall1 += recall_at_k(rec.items, q.target, 1);
    report.recall5 += recall_at_k(rec.items, q.target, 5);
    report.recall10 += recall_at_k(rec.items, q.target, 10);
    report.ndcg5 += ndcg_at_k(rec.items, q.target, 5);
    report.ndcg10 += ndcg_at_k(rec.items, q.target, 10);
  }
  report.users = queries.size();
  if (report.users > 0) {
    const double n = static_cast<double>(report.users);
    report.recall1 /= n;
    report.recall5 /= n;
    report.recall10 /= n;
    report.ndcg5 /= n;
    report.ndcg10 /= n;
  }
  return report;
}

std::vector<std::pair<int, int>> step_count_grid() {
  return {{0, 1}, {0, 2}, {2, 2}, {4, 2}, {6, 2}, {4, 3}, {4, 4}};
}

std::vector<BenchmarkRow> benchmark_decoding(const ModelConfig& model,
                                             const ParameterSet<float>& params,
                                             const InverseIndex& index,
                                             std::span<const EvalQuery> queries,
                                             std::span<const std::pair<int, int>> grid,
                                             const BenchmarkOptions& options) {
  require(!queries.empty(), ErrorKind::kInvalidArgument, "benchmark: no queries");
  std::vector<std::vector<Sid>> histories;
  for (const auto& q : queries) histories.push_back(history_sids(index, q.history));

  std::vector<BenchmarkRow> rows;
  for (const auto& [warmup, parallel] : grid) {
    DecodeConfig cfg;
    cfg.warmup_steps = warmup;
    cfg.parallel_positions = parallel;
    cfg.beam_width = options.beam_width;
    BenchmarkRow row;
    row.warmup_steps = warmup;
    row.parallel_positions = parallel;
    row.total_steps = total_steps(model.sid_length(), warmup, parallel);

    const int warm = std::min<int>(options.warmup_users, static_cast<int>(histories.size()));
    for (int u = 0; u < warm; ++u) decode_topB(model, params, histories[u], cfg);

    double hits = 0.0;
    row.measured_steps = -1;
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t u = 0; u < histories.size(); ++u) {
      const auto decoded = decode_topB(model, params, histories[u], cfg);
      if (row.measured_steps < 0) row.measured_steps = decoded.forward_calls;
      require(decoded.forward_calls == row.measured_steps, ErrorKind::kState,
              "benchmark: forward-call count varies across users");
      hits += recall_at_k(sids_to_items(ranked_sids(decoded), index, 10), queries[u].target, 10);
    }
    row.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    row.qps = static_cast<double>(histories.size()) / row.seconds;
    row.recall10 = hits / static_cast<double>(histories.size());
    rows.push_back(row);
  }
  return rows;
}

std::string benchmark_json(std::span<const BenchmarkRow> rows) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& r : rows) {
    doc.push_back({{"r_warm", r.warmup_steps},
                   {"m_par", r.parallel_positions},
                   {"total_steps", r.total_steps},
                   {"measured_steps", r.measured_steps},
                   {"seconds", r.seconds},
                   {"qps", r.qps},
                   {"recall@10", r.recall10}});
  }
  return doc.dump(2);
}

std::string benchmark_table(std::span<const BenchmarkRow> rows) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%6s %6s %10s %9s %10s %10s\n", "R_warm", "m_par",
                "total_step", "measured", "QPS", "R@10");
  out << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%6d %6d %10d %9d %10.2f %10.4f\n", r.warmup_steps,
                  r.parallel_positions, r.total_steps, r.measured_steps, r.qps, r.recall10);
    out << buf;
  }
  return out.str();
}

std::string benchmark_csv(std::span<const BenchmarkRow> rows) {
  std::ostringstream out;
  out << "r_warm,m_par,total_steps,measured_steps,seconds,qps,recall10\n";
  for (const auto& r : rows) {
    out << r.warmup_steps << ',' << r.parallel_positions << ',' << r.total_steps << ','
        << r.measured_steps << ',' << r.seconds << ',' << r.qps << ',' << r.recall10 << '\n';
  }
  return out.str();
}

}  // namespace mdgr
