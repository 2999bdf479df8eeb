#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "clotseg/tensor.hpp"

namespace clotseg {

/// Compares the reverse-mode gradient of a scalar-valued function against
/// central finite differences, coordinate by coordinate, over every tensor in
/// `params`. Returns the maximum relative error
///   |analytic - numeric| / max(1, |analytic|, |numeric|).
/// `f` must re-run the full forward pass each call (it is invoked with the
/// perturbed parameter values under NoGrad).
template <typename S>
double grad_check(const std::function<Tensor<S>()>& f, const std::vector<Tensor<S>>& params,
                  double h = 1e-5) {
  for (const auto& p : params) {
    if (!p.requires_grad()) throw ValueError("grad_check: all params must require grad");
  }
  for (auto p : params) p.zero_grad();
  Tensor<S> y = f();
  if (y.size() != 1) {
    throw ValueError("grad_check: function must be scalar-valued, got shape " +
                     shape_str(y.shape()));
  }
  backward(y);
  std::vector<std::vector<S>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    analytic.emplace_back(p.grad().begin(), p.grad().end());
  }

  double max_rel = 0.0;
  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<S> p = params[pi];
    auto values = p.mutable_data();
    for (std::int64_t i = 0; i < p.size(); ++i) {
      const S saved = values[i];
      values[i] = saved + static_cast<S>(h);
      const double fp = static_cast<double>(f().item());
      values[i] = saved - static_cast<S>(h);
      const double fm = static_cast<double>(f().item());
      values[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = static_cast<double>(analytic[pi][static_cast<std::size_t>(i)]);
      const double rel =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      if (rel > max_rel) max_rel = rel;
    }
  }
  return max_rel;
}

}  // namespace clotseg
