#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cva/tensor.hpp"

namespace cva {

/// One tensor under test: `value` is perturbed in place and restored;
/// `analytic` holds the reverse-mode gradient at the unperturbed point.
struct GradTarget {
  std::string name;
  Tensor* value = nullptr;
  const Tensor* analytic = nullptr;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_name;
  std::size_t worst_index = 0;
  /// Max relative error per target, in target order.
  std::vector<std::pair<std::string, double>> per_target;
};

/// Central differences over every coordinate of every target. The error for a
/// coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
/// `eps` must lie in (0, 1e-2]; a non-finite loss raises NumericError.
GradCheckResult finite_difference_check(const std::function<double()>& loss, const std::vector<GradTarget>& targets,
                                        double eps = 1e-5);

}  // namespace cva
