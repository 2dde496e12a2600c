#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "tripse/tensor.hpp"

namespace tripse {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares the autodiff gradient of scalar f with respect to x against central
/// differences (f(x + eps e_i) - f(x - eps e_i)) / 2 eps, coordinate by coordinate.
/// The relative error is |a - n| / max(|a|, |n|, 1e-8). f must be deterministic;
/// x is perturbed in place and restored.
template <typename T>
GradCheckReport finite_diff_check(const std::function<BasicTensor<T>(const BasicTensor<T>&)>& f,
                                  BasicTensor<T> x, double eps) {
  const bool had_flag = x.requires_grad();
  const std::vector<T> saved_grad(x.grad().begin(), x.grad().end());
  x.set_requires_grad(true);
  x.zero_grad();

  f(x).backward();
  std::vector<T> analytic(x.numel(), T(0));
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

  GradCheckReport report;
  {
    NoGradGuard no_grad;
    auto values = x.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T original = values[i];
      values[i] = original + static_cast<T>(eps);
      const double plus = static_cast<double>(f(x).item());
      values[i] = original - static_cast<T>(eps);
      const double minus = static_cast<double>(f(x).item());
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = static_cast<double>(analytic[i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      if (i == 0 || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }

  x.zero_grad();
  if (!saved_grad.empty()) {
    auto& g = x.impl()->grad;
    g = saved_grad;
  }
  x.set_requires_grad(had_flag);
  return report;
}

/// Runs finite_diff_check over each tensor in turn, holding the others fixed,
/// and returns the worst report. f reads the tensors through shared handles.
template <typename T>
GradCheckReport finite_diff_check_all(const std::function<BasicTensor<T>()>& f,
                                      const std::vector<BasicTensor<T>>& tensors, double eps) {
  GradCheckReport worst;
  const std::function<BasicTensor<T>(const BasicTensor<T>&)> g = [&f](const BasicTensor<T>&) { return f(); };
  for (const auto& t : tensors) {
    const auto r = finite_diff_check<T>(g, t, eps);
    if (r.max_rel_error >= worst.max_rel_error) worst = r;
  }
  for (const auto& t : tensors) BasicTensor<T>(t).zero_grad();
  return worst;
}

}  // namespace tripse
