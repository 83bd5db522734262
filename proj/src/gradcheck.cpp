#include "cva/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cva {

GradCheckResult finite_difference_check(const std::function<double()>& loss, const std::vector<GradTarget>& targets,
                                        double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw std::invalid_argument("finite-difference eps must lie in (0, 1e-2]");
  auto eval = [&] {
    const double v = loss();
    if (!std::isfinite(v)) throw NumericError("non-finite loss during finite-difference evaluation");
    return v;
  };

  GradCheckResult result;
  for (const auto& target : targets) {
    if (target.value == nullptr || target.analytic == nullptr)
      throw std::invalid_argument("gradient target '" + target.name + "' is incomplete");
    if (target.value->shape() != target.analytic->shape())
      throw ShapeError("gradient shape for '" + target.name + "'", target.value->shape(), target.analytic->shape());
    double worst = 0.0;
    auto data = target.value->data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double up = eval();
      data[i] = saved - eps;
      const double down = eval();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = (*target.analytic)[i];
      const double err = std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
      worst = std::max(worst, err);
      if (err > result.max_rel_error || result.worst_name.empty()) {
        result.max_rel_error = err;
        result.worst_name = target.name;
        result.worst_index = i;
      }
    }
    result.per_target.emplace_back(target.name, worst);
  }
  return result;
}

}  // namespace cva
