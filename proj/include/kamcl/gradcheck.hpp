#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "kamcl/tape.hpp"

namespace kamcl::ad {

/// Builds a scalar loss on a fresh tape from the current parameter values.
using LossProgram = std::function<Var(Tape&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

/// Compares backward() against central differences (f(x+eps) - f(x-eps)) / (2 eps)
/// on every coordinate of every parameter. Parameter values are restored.
inline GradCheckResult check_gradient(const LossProgram& loss_fn, std::span<ParamTensor* const> params,
                                      double eps = 1e-5) {
  for (auto* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(loss_fn(tape));
  }

  auto evaluate = [&] {
    Tape tape;
    return loss_fn(tape).value().item();
  };

  GradCheckResult result;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double original = p->value[i];
      p->value[i] = original + eps;
      const double plus = evaluate();
      p->value[i] = original - eps;
      const double minus = evaluate();
      p->value[i] = original;

      const double numeric = (plus - minus) / (2.0 * eps);
      const double analytic = p->grad[i];
      const double err = relative_error(analytic, numeric);
      ++result.coordinates;
      if (err > result.max_rel_error || result.worst_param.empty()) {
        result.max_rel_error = err;
        result.worst_param = p->name;
        result.worst_index = i;
        result.analytic = analytic;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace kamcl::ad
