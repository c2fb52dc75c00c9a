// SPDX-License-Identifier: Apache-2.0

#include "mome/training/plugins.hpp"

#include <stdexcept>

namespace mome::training {

ad::Tensor SourcePlugins::ffn_block(const backbone::FfnSite& site) {
  const auto& expert = experts_.layers.at(site.global_layer);
  return experts::expert_residual_forward(expert, site.ffn_input, site.ffn_origin);
}

TargetPlugins::TargetPlugins(std::span<const experts::SourceExperts> sources, const TargetModules& modules,
                             bool use_moe, bool adapter_residual)
    : modules_(modules), use_moe_(use_moe), adapter_residual_(adapter_residual) {
  const std::size_t n_layers = modules.adapters.size();
  if (use_moe) {
    if (sources.empty()) throw std::invalid_argument("TargetPlugins: the mixture needs at least one source");
    if (modules.gates.size() != n_layers) throw std::invalid_argument("TargetPlugins: one gate per layer required");
  }
  experts_by_layer_.resize(n_layers);
  for (const auto& src : sources) {
    if (src.layers.size() != n_layers) {
      throw std::invalid_argument("TargetPlugins: source '" + src.task_id + "' covers " +
                                  std::to_string(src.layers.size()) + " layers, expected " + std::to_string(n_layers));
    }
    for (std::size_t l = 0; l < n_layers; ++l) experts_by_layer_[l].push_back(src.layers[l]);
  }
  mixtures_.resize(n_layers);
}

void TargetPlugins::reset() {
  for (auto& m : mixtures_) m.reset();
}

ad::Tensor TargetPlugins::ffn_block(const backbone::FfnSite& site) {
  const std::size_t l = site.global_layer;
  ad::Tensor h_e = site.ffn_origin;
  if (use_moe_) {
    const std::size_t prompt_len = site.acts.prompt_len;
    // Without a prompt the gate pools the whole sequence.
    const std::size_t pool_len = prompt_len > 0 ? prompt_len
                                 : site.kind == backbone::BlockKind::encoder ? site.ffn_input.rows()
                                                                             : site.acts.encoder_final.rows();
    const ad::Tensor h_gate = gating::gate_input(site.kind, site.acts, l, pool_len);
    mixtures_[l] = gating::moe_forward(site.ffn_input, experts_by_layer_[l], modules_.gates[l], h_gate, site.ffn_origin);
    h_e = mixtures_[l]->h_e;
  }
  return gating::target_adapter_forward(modules_.adapters.at(l), h_e, adapter_residual_);
}

ad::Tensor MergedLoraPlugins::ffn_block(const backbone::FfnSite& site) {
  return experts::merged_ffn_forward(merged_.at(site.global_layer), site.ffn_input);
}

}  // namespace mome::training
