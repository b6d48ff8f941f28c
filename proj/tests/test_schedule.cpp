#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <numeric>

#include "mdgr/error.hpp"
#include "mdgr/schedule.hpp"

namespace mdgr {
namespace {

CurriculumConfig curriculum(std::int64_t total, double gamma = 2.0) {
  CurriculumConfig cfg;
  cfg.total_steps = total;
  cfg.gamma = gamma;
  return cfg;
}

TEST(Difficulty, Endpoints) {
  const auto cfg = curriculum(100);
  EXPECT_EQ(stretched_difficulty(0, cfg), 1.0);
  EXPECT_EQ(stretched_difficulty(100, cfg), 0.0);
  EXPECT_EQ(stretched_difficulty(5000, cfg), 0.0);
}

TEST(Difficulty, HalfwayWithGammaTwo) {
  EXPECT_EQ(stretched_difficulty(50, curriculum(100)), 0.5);
}

TEST(Difficulty, NonIncreasing) {
  for (double gamma : {0.5, 1.0, 2.0, 4.0}) {
    const auto cfg = curriculum(1000, gamma);
    double previous = 2.0;
    for (std::int64_t n = 0; n <= 1100; n += 7) {
      const double d = stretched_difficulty(n, cfg);
      EXPECT_LE(d, previous);
      EXPECT_GE(d, 0.0);
      previous = d;
    }
  }
}

TEST(Difficulty, RejectsBadInput) {
  EXPECT_THROW(stretched_difficulty(-1, curriculum(10)), Error);
  EXPECT_THROW(stretched_difficulty(0, curriculum(0)), Error);
  EXPECT_THROW(stretched_difficulty(0, curriculum(10, 0.0)), Error);
}

TEST(MaskCount, UniformAtHalfDifficulty) {
  for (int L : {1, 2, 5, 8, 13}) {
    for (double p : mask_count_distribution(0.5, L)) EXPECT_NEAR(p, 1.0 / L, 1e-12);
  }
}

TEST(MaskCount, EasyEndpoint) {
  const auto p = mask_count_distribution(1.0, 8);
  for (int k = 1; k <= 8; ++k) EXPECT_NEAR(p[k - 1], (9.0 - k) / 36.0, 1e-12);
}

TEST(MaskCount, HardEndpoint) {
  const auto p = mask_count_distribution(0.0, 8);
  double mean = 0.0;
  for (int k = 1; k <= 8; ++k) {
    EXPECT_NEAR(p[k - 1], k / 36.0, 1e-12);
    mean += k * p[k - 1];
  }
  EXPECT_NEAR(mean, 17.0 / 3.0, 1e-12);
}

TEST(MaskCount, MeanIsLinearInDifficulty) {
  for (double delta : {0.0, 0.1, 0.37, 0.5, 0.9, 1.0}) {
    const auto p = mask_count_distribution(delta, 8);
    double mean = 0.0;
    for (int k = 1; k <= 8; ++k) mean += k * p[k - 1];
    EXPECT_NEAR(mean, (204.0 - 84.0 * delta) / 36.0, 1e-9);
  }
}

TEST(MaskCount, RejectsBadDelta) {
  EXPECT_THROW(mask_count_distribution(1.5, 4), Error);
  EXPECT_THROW(mask_count_distribution(0.5, 0), Error);
}

TEST(SampleMaskCount, SingletonSupport) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_mask_count(rng, 0, curriculum(10), 1), 1);
}

TEST(SampleMaskCount, MatchesDistribution) {
  Rng rng(2);
  const int n = 100000;
  int ones = 0;
  for (int i = 0; i < n; ++i) ones += sample_mask_count(rng, 0, curriculum(10), 8) == 1 ? 1 : 0;
  EXPECT_NEAR(static_cast<double>(ones) / n, 8.0 / 36.0, 0.01);
}

TEST(SampleMaskCount, Reproducible) {
  Rng a(3), b(3);
  for (int i = 0; i < 50; ++i) {
    ASSERT_EQ(sample_mask_count(a, i, curriculum(50), 8), sample_mask_count(b, i, curriculum(50), 8));
  }
}

TEST(Frequencies, HandCount) {
  const std::vector<Sid> history{Sid{{1, 2}}, Sid{{1, 3}}, Sid{{4, 2}}};
  EXPECT_EQ(history_token_frequencies(Sid{{1, 2}}, history), (std::vector<int>{2, 2}));
}

TEST(Frequencies, NoOverlap) {
  const std::vector<Sid> history{Sid{{1, 2, 3}}, Sid{{4, 5, 6}}};
  EXPECT_EQ(history_token_frequencies(Sid{{7, 8, 9}}, history), (std::vector<int>{0, 0, 0}));
}

TEST(Frequencies, RepeatedTarget) {
  const Sid target{{3, 1, 4}};
  const std::vector<Sid> history(5, target);
  EXPECT_EQ(history_token_frequencies(target, history), (std::vector<int>{5, 5, 5}));
}

TEST(Frequencies, LengthMismatchIsAnError) {
  const std::vector<Sid> history{Sid{{1, 2, 3}}};
  EXPECT_THROW(history_token_frequencies(Sid{{1, 2}}, history), Error);
}

TEST(PositionDistribution, UniformFrequencies) {
  const std::array<int, 4> f{3, 3, 3, 3};
  for (double p : mask_position_distribution(f, 0.1)) EXPECT_NEAR(p, 0.25, 1e-12);
}

TEST(PositionDistribution, HandArithmetic) {
  const std::array<int, 2> f{0, 2};
  const auto p = mask_position_distribution(f, 0.1);
  const double w0 = 10.0, w1 = 1.0 / 2.1;
  EXPECT_NEAR(p[0], w0 / (w0 + w1), 1e-12);
  EXPECT_NEAR(p[0], 0.9545, 1e-4);
  EXPECT_NEAR(p[0] + p[1], 1.0, 1e-12);
}

TEST(PositionDistribution, RarerTokensMoreLikely) {
  const std::array<int, 5> f{0, 1, 2, 7, 7};
  const auto p = mask_position_distribution(f, 0.1);
  for (int a = 0; a < 5; ++a) {
    for (int b = 0; b < 5; ++b) {
      if (f[a] < f[b]) EXPECT_GT(p[a], p[b]);
    }
  }
}

TEST(PositionDistribution, RejectsBadInput) {
  const std::array<int, 2> f{0, 1};
  const std::array<int, 2> negative{-1, 1};
  EXPECT_THROW(mask_position_distribution(f, 0.0), Error);
  EXPECT_THROW(mask_position_distribution(negative, 0.1), Error);
}

TEST(MaskPositions, AllPositions) {
  Rng rng(4);
  const std::vector<double> p{0.1, 0.2, 0.3, 0.4};
  EXPECT_EQ(sample_mask_positions(rng, p, 4), (std::vector<int>{0, 1, 2, 3}));
}

TEST(MaskPositions, DominantPosition) {
  Rng rng(5);
  const std::vector<double> p{0.0005, 0.999, 0.0005};
  int hits = 0;
  for (int i = 0; i < 10000; ++i) hits += sample_mask_positions(rng, p, 1)[0] == 1 ? 1 : 0;
  EXPECT_GE(hits, 9900);
}

TEST(MaskPositions, SortedAndDistinct) {
  Rng rng(6);
  const std::vector<double> p(8, 0.125);
  for (int i = 0; i < 200; ++i) {
    const auto m = sample_mask_positions(rng, p, 3);
    ASSERT_EQ(m.size(), 3u);
    EXPECT_TRUE(std::is_sorted(m.begin(), m.end()));
    EXPECT_TRUE(std::adjacent_find(m.begin(), m.end()) == m.end());
  }
}

TEST(MaskPositions, Reproducible) {
  Rng a(7), b(7);
  const std::vector<double> p{0.4, 0.3, 0.2, 0.1};
  for (int i = 0; i < 50; ++i) ASSERT_EQ(sample_mask_positions(a, p, 2), sample_mask_positions(b, p, 2));
}

TEST(MaskPositions, BadCountIsAnError) {
  Rng rng(8);
  const std::vector<double> p{0.5, 0.5};
  EXPECT_THROW(sample_mask_positions(rng, p, 0), Error);
  EXPECT_THROW(sample_mask_positions(rng, p, 3), Error);
}

TEST(ApplyMask, Cases) {
  const Sid target{{5, 7, 2}};
  EXPECT_EQ(apply_mask(target, std::vector<int>{}).tokens, target.tokens);
  EXPECT_EQ(apply_mask(target, std::vector<int>{0, 1, 2}), MaskedSid::all_masked(3));
  EXPECT_EQ(apply_mask(target, std::vector<int>{1}).tokens, (std::vector<int>{5, kMaskToken, 2}));
  EXPECT_THROW(apply_mask(target, std::vector<int>{3}), Error);
}

}  // namespace
}  // namespace mdgr
