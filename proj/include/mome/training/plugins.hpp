// SPDX-License-Identifier: Apache-2.0
//
// FFN-block wiring for the two training stages.

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "mome/backbone/transformer.hpp"
#include "mome/experts/expert.hpp"
#include "mome/gating/gate.hpp"

namespace mome::training {

// Stage 1: H_output = Expert(H_i) + H_origin at every layer.
class SourcePlugins final : public backbone::LayerPlugins {
 public:
  explicit SourcePlugins(const experts::SourceExperts& experts) : experts_(experts) {}
  ad::Tensor ffn_block(const backbone::FfnSite& site) override;

 private:
  const experts::SourceExperts& experts_;
};

struct TargetModules {
  std::vector<gating::GateLayer> gates;           // per layer; empty without MoE
  std::vector<experts::ExpertAdapter> adapters;   // per layer
};

// Stage 2: gated mixture of frozen source experts followed by the target
// adapter. Mixtures from the latest forward pass are kept for the balance
// loss, indexed by global layer.
class TargetPlugins final : public backbone::LayerPlugins {
 public:
  TargetPlugins(std::span<const experts::SourceExperts> sources, const TargetModules& modules, bool use_moe,
                bool adapter_residual);

  ad::Tensor ffn_block(const backbone::FfnSite& site) override;

  const std::vector<std::optional<gating::MixtureOutput>>& mixtures() const { return mixtures_; }
  void reset();

 private:
  std::vector<std::vector<experts::ExpertAdapter>> experts_by_layer_;
  const TargetModules& modules_;
  bool use_moe_;
  bool adapter_residual_;
  std::vector<std::optional<gating::MixtureOutput>> mixtures_;
};

// Inference with LoRA experts folded into each FFN: the FFN output is
// recomputed from the merged parameters instead of the original ones.
class MergedLoraPlugins final : public backbone::LayerPlugins {
 public:
  explicit MergedLoraPlugins(std::vector<experts::MergedFfn> merged) : merged_(std::move(merged)) {}
  ad::Tensor ffn_block(const backbone::FfnSite& site) override;

 private:
  std::vector<experts::MergedFfn> merged_;
};

}  // namespace mome::training
