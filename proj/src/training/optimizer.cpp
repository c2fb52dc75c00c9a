// SPDX-License-Identifier: Apache-2.0

#include "mome/training/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace mome::training {

double scheduled_learning_rate(const AdamWConfig& cfg, std::size_t step) {
  if (step < 1) throw std::invalid_argument("scheduled_learning_rate: steps count from 1");
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
    return cfg.learning_rate * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (cfg.total_steps <= cfg.warmup_steps) return cfg.learning_rate;
  const double remaining = static_cast<double>(cfg.total_steps) - static_cast<double>(step);
  return cfg.learning_rate * std::max(0.0, remaining) / static_cast<double>(cfg.total_steps - cfg.warmup_steps);
}

double AdamW::step(std::span<backbone::NamedTensor> params, const ad::GradientMap& grads, std::size_t step) {
  const double lr = scheduled_learning_rate(cfg_, step);
  // Validate everything before touching any parameter.
  std::vector<ad::Tensor> g(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    g[k] = grads.at(params[k].tensor);
    for (double v : g[k].data()) {
      if (!std::isfinite(v)) {
        throw NonFiniteGradientError("non-finite gradient for parameter '" + params[k].name + "' at step " +
                                     std::to_string(step));
      }
    }
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].tensor.mutable_data();
    auto& mom = state_[params[k].name];
    if (mom.m.size() != values.size()) {
      mom.m.assign(values.size(), 0.0);
      mom.v.assign(values.size(), 0.0);
    }
    const auto gd = g[k].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * gd[i];
      mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * gd[i] * gd[i];
      const double m_hat = mom.m[i] / bc1;
      const double v_hat = mom.v[i] / bc2;
      values[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * values[i]);
    }
  }
  return lr;
}

}  // namespace mome::training
