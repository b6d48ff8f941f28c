#pragma once

#include <compare>
#include <string>
#include <vector>

namespace mdgr {

// Token value marking an absorbed (masked) position.
inline constexpr int kMaskToken = -1;

// Semantic ID: one token per sub-codebook.
struct Sid {
  std::vector<int> tokens;

  int length() const noexcept { return static_cast<int>(tokens.size()); }
  int operator[](int pos) const { return tokens[static_cast<std::size_t>(pos)]; }

  friend auto operator<=>(const Sid&, const Sid&) = default;
  friend bool operator==(const Sid&, const Sid&) = default;
};

// A Sid in which some positions hold kMaskToken. The mask set is exactly the
// set of positions holding kMaskToken.
struct MaskedSid {
  std::vector<int> tokens;

  static MaskedSid all_masked(int length) {
    return MaskedSid{std::vector<int>(static_cast<std::size_t>(length), kMaskToken)};
  }

  int length() const noexcept { return static_cast<int>(tokens.size()); }
  bool is_masked(int pos) const { return tokens[static_cast<std::size_t>(pos)] == kMaskToken; }

  int masked_count() const {
    int n = 0;
    for (int t : tokens) n += t == kMaskToken ? 1 : 0;
    return n;
  }

  std::vector<int> mask_positions() const {
    std::vector<int> out;
    for (int i = 0; i < length(); ++i) {
      if (is_masked(i)) out.push_back(i);
    }
    return out;
  }

  bool complete() const { return masked_count() == 0; }
  Sid to_sid() const { return Sid{tokens}; }

  friend auto operator<=>(const MaskedSid&, const MaskedSid&) = default;
  friend bool operator==(const MaskedSid&, const MaskedSid&) = default;
};

inline std::string to_string(const std::vector<int>& tokens) {
  std::string out = "(";
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += ",";
    out += tokens[i] == kMaskToken ? std::string("MASK") : std::to_string(tokens[i]);
  }
  return out + ")";
}

}  // namespace mdgr
