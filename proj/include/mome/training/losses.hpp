// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>

#include "mome/autodiff/tensor.hpp"
#include "mome/gating/gate.hpp"

namespace mome::training {

using ad::Tensor;

// Mean over non-PAD target positions of -log softmax(logits)[y].
Tensor nll_loss(const Tensor& logits, std::span<const int> target_ids);

// (1 / (N_l·N_e)) Σ_l Σ_i w_{l,i} · cos(pool(E_{l,i}), pool(H_l)), where pool
// is the mean over sequence positions. One mixture and one layer output per
// layer, in the same order.
Tensor moe_balance_loss(std::span<const gating::MixtureOutput> mixtures, std::span<const Tensor> layer_outputs);

// nll + sign·alpha·l_moe. The default sign of -1 rewards weight on experts
// whose output points the way the layer output does. With alpha == 0 the
// result is `nll` itself and the balance term is not part of the graph.
Tensor total_loss(const Tensor& nll, const Tensor& l_moe, double alpha, double sign = -1.0);

}  // namespace mome::training
