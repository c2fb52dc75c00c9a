// SPDX-License-Identifier: Apache-2.0

#include "mome/gating/gate.hpp"

#include <stdexcept>

#include "mome/autodiff/ops.hpp"

namespace mome::gating {

GateLayer make_gate(std::size_t d_model, std::size_t num_experts, std::size_t layer_index, BlockKind kind) {
  if (num_experts == 0) throw std::invalid_argument("gate needs at least one expert");
  return {Tensor::zeros({d_model, num_experts}), layer_index, kind};
}

Tensor gate_input(BlockKind kind, const backbone::ActivationRecord& acts, std::size_t layer, std::size_t prompt_len) {
  if (prompt_len == 0) throw std::invalid_argument("gate_input: prompt length must be at least 1");
  const Tensor& source = kind == BlockKind::encoder ? acts.layers.at(layer).ffn_input : acts.encoder_final;
  if (!source.defined()) throw std::logic_error("gate_input: activation not recorded yet");
  if (prompt_len > source.rows()) {
    throw std::out_of_range("gate_input: prompt length " + std::to_string(prompt_len) + " exceeds sequence length " +
                            std::to_string(source.rows()));
  }
  return ad::mean_pool_rows(prompt_len == source.rows() ? source : ad::slice_rows(source, 0, prompt_len));
}

Tensor gate_weights(const GateLayer& gate, const Tensor& h) {
  if (h.rows() != 1 || h.cols() != gate.w_gate.rows()) {
    throw ad::DimensionError("gate_weights: input " + ad::shape_to_string(h.shape()) + " vs gate " +
                             ad::shape_to_string(gate.w_gate.shape()));
  }
  return ad::softmax_lastdim(ad::matmul(h, gate.w_gate));
}

MixtureOutput moe_forward(const Tensor& ffn_input, std::span<const experts::ExpertAdapter> experts,
                          const GateLayer& gate, const Tensor& h_gate, const Tensor& h_origin) {
  if (experts.size() != gate.num_experts()) {
    throw std::invalid_argument("moe_forward: " + std::to_string(experts.size()) + " experts for a gate over " +
                                std::to_string(gate.num_experts()));
  }
  for (const auto& e : experts) {
    if (e.layer_index != gate.layer_index) {
      throw std::invalid_argument("moe_forward: expert '" + e.task_id + "' belongs to layer " +
                                  std::to_string(e.layer_index) + ", gate to layer " +
                                  std::to_string(gate.layer_index));
    }
  }
  MixtureOutput out;
  out.weights = gate_weights(gate, h_gate);
  std::vector<Tensor> terms{h_origin};
  for (std::size_t i = 0; i < experts.size(); ++i) {
    out.expert_outputs.push_back(experts::expert_forward(experts[i], ffn_input));
    terms.push_back(ad::scale_by(out.expert_outputs.back(), ad::element(out.weights, i)));
  }
  out.h_e = ad::add_n(terms);
  return out;
}

Tensor target_adapter_forward(const experts::ExpertAdapter& adapter, const Tensor& h_e, bool residual) {
  const Tensor bottleneck = experts::expert_forward(adapter, h_e);
  return residual ? ad::add(h_e, bottleneck) : bottleneck;
}

}  // namespace mome::gating
