#pragma once

#include <cstdint>

#include "mdgr/params.hpp"

namespace mdgr {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  ParameterSet<T> first_moment;
  ParameterSet<T> second_moment;
  std::uint64_t step = 0;

  static AdamState for_params(const ParameterSet<T>& params) {
    return AdamState{params.zeros_like(), params.zeros_like(), 0};
  }
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// One bias-corrected Adam update in place. Parameters without gradient
// signal (all-zero gradient, zero moments) are left untouched exactly.
template <class T>
void adam_step(ParameterSet<T>& params, const ParameterSet<T>& grads, AdamState<T>& state,
               const AdamConfig& cfg);

extern template void adam_step<float>(ParameterSet<float>&, const ParameterSet<float>&,
                                      AdamState<float>&, const AdamConfig&);
extern template void adam_step<double>(ParameterSet<double>&, const ParameterSet<double>&,
                                       AdamState<double>&, const AdamConfig&);

}  // namespace mdgr
