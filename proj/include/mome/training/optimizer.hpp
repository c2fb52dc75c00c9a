// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mome/autodiff/tensor.hpp"
#include "mome/backbone/transformer.hpp"

namespace mome::training {

struct AdamWConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;
};

// Linear warmup to the peak over `warmup_steps`, then linear decay reaching 0
// at `total_steps`. Steps count from 1.
double scheduled_learning_rate(const AdamWConfig& cfg, std::size_t step);

class NonFiniteGradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Decoupled weight decay Adam. Moments are kept per parameter name.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  // Applies one update to every parameter; returns the learning rate used.
  double step(std::span<backbone::NamedTensor> params, const ad::GradientMap& grads, std::size_t step);

  const AdamWConfig& config() const { return cfg_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamWConfig cfg_;
  std::unordered_map<std::string, Moments> state_;
};

}  // namespace mome::training
