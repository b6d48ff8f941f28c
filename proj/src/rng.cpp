#include "mdgr/rng.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "mdgr/error.hpp"

namespace mdgr {

namespace {

constexpr std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

void validate_probs(std::span<const double> probs, double& total) {
  total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    if (!std::isfinite(p) || p < 0.0) {
      fail(ErrorKind::kInvalidArgument,
           "probability at index " + std::to_string(i) + " is negative or non-finite");
    }
    total += p;
  }
  if (!(total > 0.0)) {
    fail(ErrorKind::kInvalidArgument, "probability vector has no positive mass");
  }
}

}  // namespace

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t mix_seed(std::uint64_t parent, std::uint64_t label) {
  std::uint64_t s = parent ^ rotl(label, 17) ^ 0x6a09e667f3bcc909ULL;
  splitmix64(s);
  return splitmix64(s) ^ label;
}

// FNV-1a, 64 bit.
std::uint64_t hash_label(std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t s = seed;
  for (auto& word : state_) {
    word = splitmix64(s);
  }
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  require(n > 0, ErrorKind::kInvalidArgument, "uniform_int requires n > 0");
  // Lemire's nearly-divisionless rejection method.
  __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      m = static_cast<__uint128_t>(next_u64()) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

double Rng::normal() {
  if (has_spare_normal_) {
    has_spare_normal_ = false;
    return spare_normal_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) {
    u1 = uniform();
  }
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_normal_ = radius * std::sin(angle);
  has_spare_normal_ = true;
  return radius * std::cos(angle);
}

Rng Rng::derive(std::string_view label) const {
  return Rng(mix_seed(seed_, hash_label(label)));
}

Rng Rng::derive(std::uint64_t index) const {
  return Rng(mix_seed(seed_, index * 0x9e3779b97f4a7c15ULL + 1));
}

std::size_t Rng::categorical(std::span<const double> probs) {
  double total = 0.0;
  validate_probs(probs, total);
  const double target = uniform() * total;
  double cumulative = 0.0;
  std::size_t last_positive = probs.size();
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) {
      continue;
    }
    last_positive = i;
    cumulative += probs[i];
    if (target < cumulative) {
      return i;
    }
  }
  // Rounding can leave target == cumulative at the very end.
  return last_positive;
}

std::vector<std::size_t> Rng::sample_without_replacement(std::span<const double> probs,
                                                         std::size_t k) {
  double total = 0.0;
  validate_probs(probs, total);
  std::size_t support = 0;
  for (double p : probs) {
    support += p > 0.0 ? 1 : 0;
  }
  require(k >= 1 && k <= support, ErrorKind::kInvalidArgument,
          "sample_without_replacement: k=" + std::to_string(k) +
              " outside [1, support=" + std::to_string(support) + "]");
  std::vector<double> remaining(probs.begin(), probs.end());
  std::vector<std::size_t> chosen;
  chosen.reserve(k);
  for (std::size_t draw = 0; draw < k; ++draw) {
    const std::size_t index = categorical(remaining);
    chosen.push_back(index);
    remaining[index] = 0.0;
  }
  return chosen;
}

}  // namespace mdgr
