#include "mdgr/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_set>

#include "mdgr/error.hpp"

namespace mdgr {

void DecodeConfig::validate(int sid_length) const {
  require(warmup_steps >= 0 && warmup_steps <= sid_length, ErrorKind::kInvalidArgument,
          "decode: warm-up steps " + std::to_string(warmup_steps) + " outside [0, " +
              std::to_string(sid_length) + "]");
  require(parallel_positions >= 1, ErrorKind::kInvalidArgument,
          "decode: parallel positions must be >= 1");
  require(beam_width >= 1, ErrorKind::kInvalidArgument, "decode: beam width must be >= 1");
  require(max_steps >= 1, ErrorKind::kInvalidArgument, "decode: max steps must be >= 1");
}

int positions_per_step(int step, int remaining, const DecodeConfig& cfg) {
  require(step >= 0, ErrorKind::kInvalidArgument, "positions_per_step: negative step");
  const int m = step < cfg.warmup_steps ? 1 : cfg.parallel_positions;
  return std::min(m, remaining);
}

int total_steps(int sid_length, int warmup_steps, int parallel_positions) {
  require(warmup_steps >= 0 && warmup_steps <= sid_length && parallel_positions >= 1,
          ErrorKind::kInvalidArgument, "total_steps: need 0 <= R_warm <= L and m_par >= 1");
  const int rest = sid_length - warmup_steps;
  return warmup_steps + (rest + parallel_positions - 1) / parallel_positions;
}

double BeamState::fill_log_sum() const {
  double total = 0.0;
  for (const auto& rec : fill_log) total += rec.logprob;
  return total;
}

std::map<int, double> position_confidences(const BeamState& beam,
                                           const PositionLogits<float>& logits) {
  const auto masked = beam.partial.mask_positions();
  require(!masked.empty(), ErrorKind::kInvalidArgument,
          "position_confidences: beam has no masked positions");
  std::map<int, double> out;
  for (int l : masked) {
    const auto& z = logits.at(static_cast<std::size_t>(l));
    require(!z.empty(), ErrorKind::kInvalidArgument,
            "position_confidences: no logits for masked position " + std::to_string(l));
    const auto logp = position_log_probs<float>(z);
    out[l] = std::exp(*std::max_element(logp.begin(), logp.end()));
  }
  return out;
}

std::vector<int> select_positions(const std::map<int, double>& confidences, int m, bool random,
                                  Rng& rng) {
  require(m >= 1 && m <= static_cast<int>(confidences.size()), ErrorKind::kInvalidArgument,
          "select_positions: m=" + std::to_string(m) + " with " +
              std::to_string(confidences.size()) + " candidate positions");
  std::vector<std::pair<int, double>> entries(confidences.begin(), confidences.end());
  std::vector<int> chosen;
  if (random) {
    const std::vector<double> uniform(entries.size(), 1.0);
    for (std::size_t i : rng.sample_without_replacement(uniform, static_cast<std::size_t>(m))) {
      chosen.push_back(entries[i].first);
    }
  } else {
    std::stable_sort(entries.begin(), entries.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    for (int i = 0; i < m; ++i) chosen.push_back(entries[static_cast<std::size_t>(i)].first);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<std::pair<int, double>> token_shortlist(std::span<const float> logits, int n) {
  const auto logp = position_log_probs<float>(logits);
  std::vector<std::pair<int, double>> all;
  all.reserve(logp.size());
  for (std::size_t c = 0; c < logp.size(); ++c) all.emplace_back(static_cast<int>(c), logp[c]);
  const auto keep = std::min<std::size_t>(static_cast<std::size_t>(std::max(n, 0)), all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                    [](const auto& a, const auto& b) {
                      return a.second != b.second ? a.second > b.second : a.first < b.first;
                    });
  all.resize(keep);
  return all;
}

namespace {

using Shortlist = std::vector<std::pair<int, double>>;

// Calls fn(ranks) for every rank tuple (0-based) whose product of 1-based
// ranks is <= budget; with budget < 0 every tuple is visited.
template <class Fn>
void for_each_tuple(const std::vector<Shortlist>& lists, long long budget, std::vector<int>& ranks,
                    std::size_t depth, long long product, Fn&& fn) {
  if (depth == lists.size()) {
    fn(ranks);
    return;
  }
  const int n = static_cast<int>(lists[depth].size());
  for (int r = 0; r < n; ++r) {
    const long long next = product * (r + 1);
    if (budget >= 0 && next > budget) break;
    ranks[depth] = r;
    for_each_tuple(lists, budget, ranks, depth + 1, next, fn);
  }
}

}  // namespace

std::vector<BeamState> expand_beam(const BeamState& beam, std::span<const int> positions,
                                   const PositionLogits<float>& logits, int beam_width, int step,
                                   bool frontier) {
  require(!positions.empty(), ErrorKind::kInvalidArgument, "expand_beam: no positions selected");
  std::vector<Shortlist> lists;
  for (int l : positions) {
    require(beam.partial.is_masked(l), ErrorKind::kInvalidArgument,
            "expand_beam: position " + std::to_string(l) + " is already filled");
    lists.push_back(token_shortlist(logits.at(static_cast<std::size_t>(l)), beam_width));
  }
  std::vector<BeamState> out;
  std::vector<int> ranks(positions.size(), 0);
  for_each_tuple(lists, frontier ? beam_width : -1, ranks, 0, 1, [&](const std::vector<int>& r) {
    BeamState child = beam;
    double added = 0.0;
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const auto& [token, logp] = lists[i][static_cast<std::size_t>(r[i])];
      child.partial.tokens[static_cast<std::size_t>(positions[i])] = token;
      child.fill_log.push_back(FillRecord{step, positions[i], token, logp});
      added += logp;
    }
    child.score = beam.score + added;
    out.push_back(std::move(child));
  });
  return out;
}

bool beam_precedes(const BeamState& a, const BeamState& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.partial.tokens < b.partial.tokens;
}

std::vector<BeamState> prune_beams(std::vector<BeamState> candidates, int beam_width,
                                   PruneTrace* trace) {
  require(!candidates.empty(), ErrorKind::kInvalidArgument, "prune_beams: no candidates");
  require(beam_width >= 1, ErrorKind::kInvalidArgument, "prune_beams: beam width must be >= 1");
  const auto keep = std::min<std::size_t>(static_cast<std::size_t>(beam_width), candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                    candidates.end(), beam_precedes);
  if (trace != nullptr) {
    trace->candidates = candidates.size();
    trace->min_kept = candidates[keep - 1].score;
    for (std::size_t i = keep; i < candidates.size(); ++i) {
      trace->max_dropped = std::max(trace->max_dropped, candidates[i].score);
    }
  }
  candidates.resize(keep);
  return candidates;
}

DecodeResult decode_topB(DenoiserSession<float>& session, const ModelConfig& model,
                         const DecodeConfig& cfg) {
  const int L = model.sid_length();
  cfg.validate(L);
  Rng rng(cfg.seed);
  const int calls_before = session.forward_calls();
  DecodeResult result;
  std::vector<BeamState> beams{BeamState{MaskedSid::all_masked(L), 0.0, {}}};
  std::vector<MaskedSid> inputs;
  int step = 0;
  while (beams.front().partial.masked_count() > 0) {
    require(step < cfg.max_steps, ErrorKind::kState,
            "decode: exceeded max_steps=" + std::to_string(cfg.max_steps) +
                " with positions still masked");
    const int m = positions_per_step(step, beams.front().partial.masked_count(), cfg);
    inputs.clear();
    for (const auto& b : beams) inputs.push_back(b.partial);
    const auto logits = session.forward(inputs);

    std::vector<BeamState> candidates;
    for (std::size_t i = 0; i < beams.size(); ++i) {
      const auto conf = position_confidences(beams[i], logits[i]);
      const auto chosen = select_positions(conf, m, cfg.random_position_selection, rng);
      auto children = expand_beam(beams[i], chosen, logits[i], cfg.beam_width, step,
                                  !cfg.exhaustive_expansion);
      std::move(children.begin(), children.end(), std::back_inserter(candidates));
    }
    DecodeStepTrace trace{step, m, {}};
    beams = prune_beams(std::move(candidates), cfg.beam_width, &trace.prune);
    result.steps.push_back(trace);
    ++step;
  }

  // Different fill orders can reach the same SID; keep the better one.
  std::sort(beams.begin(), beams.end(), beam_precedes);
  std::set<std::vector<int>> seen;
  for (auto& b : beams) {
    if (seen.insert(b.partial.tokens).second) result.beams.push_back(std::move(b));
  }
  result.forward_calls = session.forward_calls() - calls_before;
  return result;
}

DecodeResult decode_topB(const ModelConfig& model, const ParameterSet<float>& params,
                         std::span<const Sid> history, const DecodeConfig& cfg) {
  DenoiserSession<float> session(model, params, history);
  return decode_topB(session, model, cfg);
}

std::vector<std::string> sids_to_items(std::span<const Sid> ranked, const InverseIndex& index,
                                       int k) {
  require(k >= 1, ErrorKind::kInvalidArgument, "sids_to_items: K must be >= 1");
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const Sid& sid : ranked) {
    for (const auto& item : index.lookup(sid)) {
      if (static_cast<int>(out.size()) == k) return out;
      if (seen.insert(item).second) out.push_back(item);
    }
  }
  return out;
}

}  // namespace mdgr
