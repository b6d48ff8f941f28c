#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mdgr/params.hpp"

namespace mdgr {

// Evaluates the loss at `params`; when `grads` is non-null it must also add
// the analytic gradient into it (same layout as params, pre-zeroed).
using LossFunction = std::function<double(const ParameterSet<double>& params,
                                          ParameterSet<double>* grads)>;

struct GradCheckEntry {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  // Coordinates where the one-sided difference quotients disagree by more
  // than a smooth function allows: the loss has a kink there.
  std::vector<std::size_t> kinks;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;
  double step = 0.0;
  bool passed = false;
  std::size_t coordinates_checked = 0;

  double max_relative_error() const;
};

// Central differences over every coordinate of every parameter.
// Relative error per coordinate is |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8).
GradCheckReport grad_check(const LossFunction& loss, ParameterSet<double>& params, double h,
                           double tol);

}  // namespace mdgr
