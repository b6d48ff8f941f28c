#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace mdgr {

// xoshiro256** seeded through splitmix64. The state transition is pure
// integer arithmetic, so the raw u64 stream is identical on every platform.
// Floating-point draws (uniform, normal) derive from that stream; `normal`
// uses libm and is only guaranteed reproducible on one machine.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);
  double normal();

  // Child stream: seed = mix(parent seed, label). Independent of how many
  // draws the parent has already made.
  Rng derive(std::string_view label) const;
  Rng derive(std::uint64_t index) const;

  // Index i drawn with probability probs[i] / sum(probs).
  std::size_t categorical(std::span<const double> probs);

  // k distinct indices, drawn one at a time from probs with the chosen entry
  // removed and the rest renormalized after each draw. Returned in draw order.
  std::vector<std::size_t> sample_without_replacement(std::span<const double> probs,
                                                      std::size_t k);

  template <class T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t mix_seed(std::uint64_t parent, std::uint64_t label);
std::uint64_t hash_label(std::string_view label);

}  // namespace mdgr
