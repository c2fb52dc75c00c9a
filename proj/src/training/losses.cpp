// SPDX-License-Identifier: Apache-2.0

#include "mome/training/losses.hpp"

#include <stdexcept>

#include "mome/autodiff/ops.hpp"
#include "mome/tasks/tokenizer.hpp"

namespace mome::training {

Tensor nll_loss(const Tensor& logits, std::span<const int> target_ids) {
  if (logits.rows() != target_ids.size()) {
    throw ad::DimensionError("nll_loss: logits " + ad::shape_to_string(logits.shape()) + " for " +
                             std::to_string(target_ids.size()) + " targets");
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < target_ids.size(); ++i)
    if (target_ids[i] != tasks::kPadId) keep.push_back(i);
  if (keep.empty()) throw std::invalid_argument("nll_loss: every target position is padding");

  const Tensor logp = ad::log_softmax_lastdim(logits);
  Tensor picked;
  if (keep.size() == target_ids.size()) {
    picked = ad::pick(logp, target_ids);
  } else {
    std::vector<Tensor> rows;
    std::vector<int> ids;
    for (auto i : keep) {
      rows.push_back(ad::slice_rows(logp, i, i + 1));
      ids.push_back(target_ids[i]);
    }
    picked = ad::pick(ad::concat_rows(rows), ids);
  }
  return ad::scale(ad::mean(picked), -1.0);
}

Tensor moe_balance_loss(std::span<const gating::MixtureOutput> mixtures, std::span<const Tensor> layer_outputs) {
  if (mixtures.size() != layer_outputs.size()) {
    throw std::invalid_argument("moe_balance_loss: " + std::to_string(mixtures.size()) + " mixtures for " +
                                std::to_string(layer_outputs.size()) + " layer outputs");
  }
  if (mixtures.empty()) return Tensor::scalar(0.0);
  const std::size_t n_experts = mixtures.front().expert_outputs.size();
  std::vector<Tensor> terms;
  for (std::size_t l = 0; l < mixtures.size(); ++l) {
    const auto& mix = mixtures[l];
    if (mix.expert_outputs.size() != n_experts) throw std::invalid_argument("moe_balance_loss: expert count varies by layer");
    const Tensor layer_vec = ad::mean_pool_rows(layer_outputs[l]);
    for (std::size_t i = 0; i < n_experts; ++i) {
      const Tensor cos = ad::cosine_sim(ad::mean_pool_rows(mix.expert_outputs[i]), layer_vec);
      terms.push_back(ad::scale_by(cos, ad::element(mix.weights, i)));
    }
  }
  return ad::scale(ad::add_n(terms), 1.0 / static_cast<double>(mixtures.size() * n_experts));
}

Tensor total_loss(const Tensor& nll, const Tensor& l_moe, double alpha, double sign) {
  if (alpha == 0.0 || !l_moe.defined()) return nll;
  return ad::add(nll, ad::scale(l_moe, sign * alpha));
}

}  // namespace mome::training
