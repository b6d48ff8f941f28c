#include "mdgr/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mdgr {

double GradCheckReport::max_relative_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_relative_error);
  return worst;
}

GradCheckReport grad_check(const LossFunction& loss, ParameterSet<double>& params, double h,
                           double tol) {
  require(h > 0.0, ErrorKind::kInvalidArgument, "grad_check: step h must be positive");
  require(tol > 0.0, ErrorKind::kInvalidArgument, "grad_check: tolerance must be positive");

  ParameterSet<double> analytic = params.zeros_like();
  const double base = loss(params, &analytic);
  require(std::isfinite(base), ErrorKind::kNumericOverflow,
          "grad_check: loss is non-finite at the unperturbed point");

  GradCheckReport report;
  report.tolerance = tol;
  report.step = h;
  report.passed = true;

  for (std::size_t p = 0; p < params.size(); ++p) {
    GradCheckEntry entry;
    entry.name = params.name(p);
    Tensor<double>& w = params.at(p);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + h;
      const double plus = loss(params, nullptr);
      w[i] = saved - h;
      const double minus = loss(params, nullptr);
      w[i] = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        fail(ErrorKind::kNumericOverflow, "grad_check: non-finite loss when perturbing " +
                                              entry.name + "[" + std::to_string(i) + "]");
      }
      const double numeric = (plus - minus) / (2.0 * h);
      const double ad = analytic.at(p)[i];
      const double denom = std::max({std::abs(ad), std::abs(numeric), 1e-8});
      const double rel = std::abs(ad - numeric) / denom;
      if (rel > entry.max_relative_error) {
        entry.max_relative_error = rel;
        entry.worst_index = i;
        entry.analytic_at_worst = ad;
        entry.numeric_at_worst = numeric;
      }
      // A smooth loss has forward and backward quotients differing by about
      // h * f''. A jump in the derivative shows up as an O(1) gap.
      const double forward = (plus - base) / h;
      const double backward = (base - minus) / h;
      const double gap = std::abs(forward - backward);
      if (gap > 1e3 * h && gap > 0.5 * std::max(std::abs(forward), std::abs(backward))) {
        entry.kinks.push_back(i);
      }
      ++report.coordinates_checked;
    }
    if (entry.max_relative_error > tol || !entry.kinks.empty()) {
      report.passed = false;
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace mdgr
