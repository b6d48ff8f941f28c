#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mdgr/rng.hpp"
#include "mdgr/sid.hpp"

namespace mdgr {

// Score over mask counts k in {1..L}.
using ScoreFunction = std::function<double(int k, int L)>;

// f_low(k) = L + 1 - k: favors few masks.
double linear_low_score(int k, int L);
// f_high(k) = k: favors many masks.
double linear_high_score(int k, int L);

struct CurriculumConfig {
  double gamma = 2.0;
  std::int64_t total_steps = 1;
  ScoreFunction f_low = linear_low_score;
  ScoreFunction f_high = linear_high_score;

  void validate() const;
};

// delta = sin(pi/2 * (1 - tau))^gamma with tau = min(1, n / N).
// 1 at the start of training (easy), 0 from step N on (hard).
double stretched_difficulty(std::int64_t step, const CurriculumConfig& cfg);

// P_time(k) proportional to (1 - delta) f_high(k) + delta f_low(k), k = 1..L.
// Entry i of the result is P_time(i + 1).
std::vector<double> mask_count_distribution(double delta, int sid_length,
                                            const CurriculumConfig& cfg = {});

// k ~ P_time at training step n.
int sample_mask_count(Rng& rng, std::int64_t step, const CurriculumConfig& cfg, int sid_length);

// f[l] = number of history items whose token at l equals target[l].
std::vector<int> history_token_frequencies(const Sid& target, std::span<const Sid> history);

// P_pos[l] proportional to 1 / (f[l] + eps).
std::vector<double> mask_position_distribution(std::span<const int> frequencies, double epsilon);

// |M| = k distinct positions drawn sequentially from P_pos without
// replacement. Returned sorted ascending.
std::vector<int> sample_mask_positions(Rng& rng, std::span<const double> position_probs, int k);

// Positions in M become kMaskToken; all others keep the target token.
MaskedSid apply_mask(const Sid& target, std::span<const int> positions);

}  // namespace mdgr
