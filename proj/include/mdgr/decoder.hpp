#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mdgr/codebook.hpp"
#include "mdgr/model.hpp"
#include "mdgr/rng.hpp"
#include "mdgr/sid.hpp"

namespace mdgr {

struct DecodeConfig {
  int warmup_steps = 4;        // R_warm
  int parallel_positions = 2;  // m_par
  int beam_width = 50;         // B
  int max_steps = 64;
  // Ablation: pick positions uniformly instead of by confidence.
  bool random_position_selection = false;
  // Enumerate every token combination instead of the rank-product frontier.
  // Both give the same beams; this one exists to check that claim.
  bool exhaustive_expansion = false;
  std::uint64_t seed = 0;

  void validate(int sid_length) const;
};

// m = 1 during warm-up, min(m_par, remaining) afterwards.
int positions_per_step(int step, int remaining, const DecodeConfig& cfg);

// R_warm + ceil((L - R_warm) / m_par).
int total_steps(int sid_length, int warmup_steps, int parallel_positions);

struct FillRecord {
  int step = 0;
  int position = 0;
  int token = 0;
  double logprob = 0.0;
};

struct BeamState {
  MaskedSid partial;
  double score = 0.0;
  std::vector<FillRecord> fill_log;

  double fill_log_sum() const;
};

// Max token probability per masked position of `beam`; filled positions are
// absent from the result.
std::map<int, double> position_confidences(const BeamState& beam,
                                           const PositionLogits<float>& logits);

// The m highest-confidence positions, ties to the lowest index; uniform
// choice when `random` is set. Returned ascending.
std::vector<int> select_positions(const std::map<int, double>& confidences, int m, bool random,
                                  Rng& rng);

// Top-n tokens of one position as (token, log-prob), sorted by log-prob
// descending then token ascending.
std::vector<std::pair<int, double>> token_shortlist(std::span<const float> logits, int n);

// Children of `beam` filling `positions` with every combination of the
// per-position Top-B tokens (clamped to |V_l|). With `frontier` set, only
// combinations whose product of 1-based shortlist ranks is <= B are built;
// the others can never survive a Top-B prune.
std::vector<BeamState> expand_beam(const BeamState& beam, std::span<const int> positions,
                                   const PositionLogits<float>& logits, int beam_width, int step,
                                   bool frontier);

// Strict order used for pruning and final ranking: score descending, then
// token vector ascending.
bool beam_precedes(const BeamState& a, const BeamState& b);

struct PruneTrace {
  std::size_t candidates = 0;
  double min_kept = std::numeric_limits<double>::infinity();
  double max_dropped = -std::numeric_limits<double>::infinity();
};

std::vector<BeamState> prune_beams(std::vector<BeamState> candidates, int beam_width,
                                   PruneTrace* trace = nullptr);

struct DecodeStepTrace {
  int step = 0;
  int positions = 0;
  PruneTrace prune;
};

struct DecodeResult {
  // Complete SIDs, deduplicated, in beam_precedes order.
  std::vector<BeamState> beams;
  int forward_calls = 0;
  std::vector<DecodeStepTrace> steps;
};

// Warm-up two-stage beam search from the all-MASK SID.
DecodeResult decode_topB(const ModelConfig& model, const ParameterSet<float>& params,
                         std::span<const Sid> history, const DecodeConfig& cfg);

// Same, reusing an existing session (its forward counter keeps running).
DecodeResult decode_topB(DenoiserSession<float>& session, const ModelConfig& model,
                         const DecodeConfig& cfg);

// Concatenates the buckets of the ranked SIDs, drops repeated items and keeps
// the first K. SIDs without a bucket are skipped.
std::vector<std::string> sids_to_items(std::span<const Sid> ranked, const InverseIndex& index,
                                       int k);

}  // namespace mdgr
