// SPDX-License-Identifier: Apache-2.0

#include "mome/autodiff/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mome::ad {

namespace {

double evaluate(const std::function<Tensor()>& loss_fn) {
  NoGradGuard guard;
  const double v = loss_fn().item();
  if (!std::isfinite(v)) throw std::domain_error("grad_check: loss is not finite (" + std::to_string(v) + ")");
  return v;
}

}  // namespace

GradCheckReport grad_check_report(const std::function<Tensor()>& loss_fn, std::span<Tensor> params, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  const Tensor loss = loss_fn();
  if (!std::isfinite(loss.item())) throw std::domain_error("grad_check: loss is not finite");
  const GradientMap grads = backward(loss);

  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Tensor analytic = grads.at(params[p]);
    auto values = params[p].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = evaluate(loss_fn);
      values[i] = saved - eps;
      const double down = evaluate(loss_fn);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic.at(i);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      if (err > report.max_rel_error) {
        report = {err, p, i, a, numeric};
      }
    }
  }
  return report;
}

double grad_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params, double eps) {
  return grad_check_report(loss_fn, params, eps).max_rel_error;
}

}  // namespace mome::ad
