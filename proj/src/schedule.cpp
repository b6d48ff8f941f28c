#include "mdgr/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mdgr/error.hpp"

namespace mdgr {

double linear_low_score(int k, int L) { return static_cast<double>(L + 1 - k); }
double linear_high_score(int k, int /*L*/) { return static_cast<double>(k); }

void CurriculumConfig::validate() const {
  require(gamma > 0.0, ErrorKind::kInvalidArgument, "curriculum: gamma must be positive");
  require(total_steps >= 1, ErrorKind::kInvalidArgument, "curriculum: total_steps must be >= 1");
  require(static_cast<bool>(f_low) && static_cast<bool>(f_high), ErrorKind::kInvalidArgument,
          "curriculum: score functions must be set");
}

double stretched_difficulty(std::int64_t step, const CurriculumConfig& cfg) {
  cfg.validate();
  require(step >= 0, ErrorKind::kInvalidArgument, "stretched_difficulty: step must be >= 0");
  if (step >= cfg.total_steps) {
    return 0.0;
  }
  const double tau = static_cast<double>(step) / static_cast<double>(cfg.total_steps);
  // sqrt(1 - cos^2(x)) = sin(x) on [0, pi/2], and sin^2(pi/2 (1 - tau)) equals
  // (1 + cos(pi tau)) / 2. The half-angle form is exact at tau = 0 and 1/2.
  const double sin_squared = 0.5 * (1.0 + std::cos(std::numbers::pi * tau));
  return std::clamp(std::pow(sin_squared, 0.5 * cfg.gamma), 0.0, 1.0);
}

std::vector<double> mask_count_distribution(double delta, int sid_length,
                                            const CurriculumConfig& cfg) {
  require(delta >= 0.0 && delta <= 1.0, ErrorKind::kInvalidArgument,
          "mask_count_distribution: delta outside [0, 1]");
  require(sid_length >= 1, ErrorKind::kInvalidArgument, "mask_count_distribution: L must be >= 1");
  std::vector<double> scores(static_cast<std::size_t>(sid_length));
  double total = 0.0;
  for (int k = 1; k <= sid_length; ++k) {
    const double s = (1.0 - delta) * cfg.f_high(k, sid_length) + delta * cfg.f_low(k, sid_length);
    if (!(s > 0.0)) {
      fail(ErrorKind::kInvalidArgument,
           "mask_count_distribution: score s(" + std::to_string(k) + ") is not positive");
    }
    scores[static_cast<std::size_t>(k - 1)] = s;
    total += s;
  }
  for (double& s : scores) s /= total;
  return scores;
}

int sample_mask_count(Rng& rng, std::int64_t step, const CurriculumConfig& cfg, int sid_length) {
  const auto probs = mask_count_distribution(stretched_difficulty(step, cfg), sid_length, cfg);
  return static_cast<int>(rng.categorical(probs)) + 1;
}

std::vector<int> history_token_frequencies(const Sid& target, std::span<const Sid> history) {
  const int L = target.length();
  std::vector<int> freq(static_cast<std::size_t>(L), 0);
  for (const Sid& item : history) {
    require(item.length() == L, ErrorKind::kShapeMismatch,
            "history_token_frequencies: history SID of length " + std::to_string(item.length()) +
                " for target of length " + std::to_string(L));
    for (int l = 0; l < L; ++l) {
      freq[static_cast<std::size_t>(l)] += item[l] == target[l] ? 1 : 0;
    }
  }
  return freq;
}

std::vector<double> mask_position_distribution(std::span<const int> frequencies, double epsilon) {
  require(epsilon > 0.0, ErrorKind::kInvalidArgument,
          "mask_position_distribution: epsilon must be positive");
  std::vector<double> weights(frequencies.size());
  double total = 0.0;
  for (std::size_t l = 0; l < frequencies.size(); ++l) {
    require(frequencies[l] >= 0, ErrorKind::kInvalidArgument,
            "mask_position_distribution: negative frequency");
    weights[l] = 1.0 / (static_cast<double>(frequencies[l]) + epsilon);
    total += weights[l];
  }
  for (double& w : weights) w /= total;
  return weights;
}

std::vector<int> sample_mask_positions(Rng& rng, std::span<const double> position_probs, int k) {
  require(k >= 1 && k <= static_cast<int>(position_probs.size()), ErrorKind::kInvalidArgument,
          "sample_mask_positions: k=" + std::to_string(k) + " outside [1, " +
              std::to_string(position_probs.size()) + "]");
  const auto drawn = rng.sample_without_replacement(position_probs, static_cast<std::size_t>(k));
  std::vector<int> positions(drawn.begin(), drawn.end());
  std::sort(positions.begin(), positions.end());
  return positions;
}

MaskedSid apply_mask(const Sid& target, std::span<const int> positions) {
  MaskedSid out{target.tokens};
  for (int pos : positions) {
    require(pos >= 0 && pos < target.length(), ErrorKind::kOutOfRange,
            "apply_mask: position " + std::to_string(pos) + " outside SID of length " +
                std::to_string(target.length()));
    out.tokens[static_cast<std::size_t>(pos)] = kMaskToken;
  }
  return out;
}

}  // namespace mdgr
