// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>

#include "mome/autodiff/tensor.hpp"

namespace mome::ad {

struct GradCheckReport {
  double max_rel_error = 0.0;
  // Parameter index and flat element where the worst error occurred.
  std::size_t worst_param = 0;
  std::size_t worst_element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares backward() against central differences
// (f(p+eps) - f(p-eps)) / (2 eps) for every element of every leaf in
// `params`. The relative error denominator is max(|analytic|, |numeric|, 1e-8).
// `loss_fn` must rebuild the graph from the current parameter values on every
// call and be deterministic.
GradCheckReport grad_check_report(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                                  double eps = 1e-5);

double grad_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params, double eps = 1e-5);

}  // namespace mome::ad
