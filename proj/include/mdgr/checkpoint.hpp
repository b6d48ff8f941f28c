#pragma once

#include <cstdint>
#include <string>

#include "mdgr/model.hpp"
#include "mdgr/optim.hpp"
#include "mdgr/params.hpp"

namespace mdgr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  std::int64_t step = 0;
  ParameterSet<float> params;
  AdamState<float> optimizer;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// Layout (little-endian):
//   "MDGR" | u32 version | u32 n + model config JSON | u64 step | u64 adam_t
//   | params | first moments | second moments
// where each array group is u32 count followed by
//   u32 name_len | name | u32 ndim | u32 dims... | f32 payload.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

// Reads the whole file before building the result, so a failed load never
// yields a partially filled checkpoint.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mdgr
