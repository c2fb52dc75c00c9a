// SPDX-License-Identifier: Apache-2.0
//
// Mixture-of-task-correlation gate: per-layer softmax weights over frozen
// source experts, the weighted expert mixture, and the target adapter that
// follows it.

#pragma once

#include <span>
#include <vector>

#include "mome/autodiff/tensor.hpp"
#include "mome/backbone/transformer.hpp"
#include "mome/experts/expert.hpp"

namespace mome::gating {

using ad::Tensor;
using backbone::BlockKind;

struct GateLayer {
  Tensor w_gate;  // d × N, zero at creation
  std::size_t layer_index = 0;  // global
  BlockKind block_kind = BlockKind::encoder;

  std::size_t num_experts() const { return w_gate.cols(); }
};

GateLayer make_gate(std::size_t d_model, std::size_t num_experts, std::size_t layer_index, BlockKind kind);

// Mean of the first `prompt_len` rows of this layer's FFN input (encoder) or
// of the final encoder states (decoder). `layer` indexes acts.layers.
Tensor gate_input(BlockKind kind, const backbone::ActivationRecord& acts, std::size_t layer, std::size_t prompt_len);

// softmax(h·W_gate) over the N experts.
Tensor gate_weights(const GateLayer& gate, const Tensor& h);

struct MixtureOutput {
  Tensor h_e;                         // H_origin + Σ w_i·E_i
  Tensor weights;                     // [N]
  std::vector<Tensor> expert_outputs; // E_i, kept for the balance loss
};

MixtureOutput moe_forward(const Tensor& ffn_input, std::span<const experts::ExpertAdapter> experts,
                          const GateLayer& gate, const Tensor& h_gate, const Tensor& h_origin);

// Adapter bottleneck applied to the mixture output. With `residual` the block
// returns H_e + bottleneck(H_e); otherwise the bare bottleneck output.
Tensor target_adapter_forward(const experts::ExpertAdapter& adapter, const Tensor& h_e, bool residual = true);

}  // namespace mome::gating
