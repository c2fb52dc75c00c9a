// SPDX-License-Identifier: Apache-2.0

#include "mome/experts/expert.hpp"

#include <stdexcept>

#include "mome/autodiff/ops.hpp"

namespace mome::experts {

std::string to_string(ExpertKind kind) { return kind == ExpertKind::lora ? "lora" : "adapter"; }

ExpertKind expert_kind_from_string(const std::string& name) {
  if (name == "lora") return ExpertKind::lora;
  if (name == "adapter") return ExpertKind::adapter;
  throw std::invalid_argument("unknown expert kind '" + name + "' (expected lora or adapter)");
}

ExpertAdapter make_expert(std::size_t d_model, std::size_t rank, ExpertKind kind, std::size_t layer_index,
                          std::string task_id, Rng& rng) {
  if (rank == 0 || rank >= d_model) {
    throw std::invalid_argument("expert rank " + std::to_string(rank) + " must satisfy 0 < r < d=" +
                                std::to_string(d_model));
  }
  std::vector<double> down(d_model * rank);
  for (auto& v : down) v = rng.normal(0.0, kExpertInitStddev);
  ExpertAdapter e;
  e.w_down = Tensor::from({d_model, rank}, std::move(down));
  e.w_up = Tensor::zeros({rank, d_model});
  e.kind = kind;
  e.layer_index = layer_index;
  e.task_id = std::move(task_id);
  return e;
}

Tensor expert_forward(const ExpertAdapter& expert, const Tensor& h) {
  if (h.cols() != expert.d_model()) {
    throw ad::DimensionError("expert '" + expert.task_id + "' expects d=" + std::to_string(expert.d_model()) +
                             ", got input " + ad::shape_to_string(h.shape()));
  }
  Tensor z = ad::matmul(h, expert.w_down);
  if (expert.kind == ExpertKind::adapter) z = ad::relu(z);
  return ad::matmul(z, expert.w_up);
}

Tensor expert_residual_forward(const ExpertAdapter& expert, const Tensor& h, const Tensor& h_origin) {
  return ad::add(expert_forward(expert, h), h_origin);
}

MergedFfn merge_lora(const backbone::FfnParams& ffn, std::span<const ExpertAdapter> experts,
                     std::span<const double> weights) {
  if (experts.size() != weights.size()) {
    throw MergeError("merge_lora: " + std::to_string(experts.size()) + " experts but " +
                     std::to_string(weights.size()) + " weights");
  }
  const std::size_t d = ffn.w_in.rows();
  for (const auto& e : experts) {
    if (e.kind != ExpertKind::lora) throw MergeError("nonlinear expert cannot merge ('" + e.task_id + "')");
    if (e.d_model() != d) throw MergeError("merge_lora: expert '" + e.task_id + "' has a different d");
    if (e.layer_index != experts.front().layer_index) throw MergeError("merge_lora: experts come from different layers");
  }
  MergedFfn merged;
  merged.base = {ffn.w_in.clone(), ffn.b_in.clone(), ffn.w_out.clone(), ffn.b_out.clone()};
  std::vector<double> bypass(d * d, 0.0);
  for (std::size_t k = 0; k < experts.size(); ++k) {
    if (weights[k] == 0.0) continue;
    const auto down = experts[k].w_down.data();
    const auto up = experts[k].w_up.data();
    const std::size_t r = experts[k].rank();
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t t = 0; t < r; ++t) acc += down[i * r + t] * up[t * d + j];
        bypass[i * d + j] += weights[k] * acc;
      }
  }
  merged.bypass = Tensor::from({d, d}, std::move(bypass));
  return merged;
}

Tensor merged_ffn_forward(const MergedFfn& merged, const Tensor& h) {
  return ad::add(backbone::ffn_forward(merged.base, h), ad::matmul(h, merged.bypass));
}

}  // namespace mome::experts
