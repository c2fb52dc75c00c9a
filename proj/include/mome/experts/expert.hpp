// SPDX-License-Identifier: Apache-2.0
//
// Bottleneck task experts that run parallel to a transformer FFN.
//
// Inputs are row vectors, so the down projection is h·W_down with W_down
// stored d×r and the up projection is ·W_up with W_up stored r×d. The Adapter
// kind keeps a ReLU between the projections; the LoRA kind is linear and can
// be folded into the host FFN with merge_lora().

#pragma once

#include <span>
#include <string>
#include <vector>

#include "mome/autodiff/tensor.hpp"
#include "mome/backbone/transformer.hpp"
#include "mome/common/rng.hpp"

namespace mome::experts {

using ad::Tensor;

enum class ExpertKind { lora, adapter };

std::string to_string(ExpertKind kind);
ExpertKind expert_kind_from_string(const std::string& name);

inline constexpr double kExpertInitStddev = 0.02;

struct ExpertAdapter {
  Tensor w_down;  // d × r
  Tensor w_up;    // r × d
  ExpertKind kind = ExpertKind::lora;
  std::size_t layer_index = 0;  // global: encoder layers first
  std::string task_id;

  std::size_t d_model() const { return w_down.rows(); }
  std::size_t rank() const { return w_down.cols(); }
  std::size_t parameter_count() const { return w_down.size() + w_up.size(); }
};

// W_down ~ N(0, 0.02), W_up = 0, so a fresh expert contributes nothing.
ExpertAdapter make_expert(std::size_t d_model, std::size_t rank, ExpertKind kind, std::size_t layer_index,
                          std::string task_id, Rng& rng);

Tensor expert_forward(const ExpertAdapter& expert, const Tensor& h);

// Expert output added to the original FFN output.
Tensor expert_residual_forward(const ExpertAdapter& expert, const Tensor& h, const Tensor& h_origin);

// One expert per transformer layer, trained jointly on one source task.
struct SourceExperts {
  std::string task_id;
  std::vector<ExpertAdapter> layers;
};

// FFN with a dense d×d bypass folded from LoRA experts:
// forward(h) = ffn_forward(base, h) + h·bypass.
struct MergedFfn {
  backbone::FfnParams base;
  Tensor bypass;
};

class MergeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Folds Σ w_i·W_down_i·W_up_i into a bypass next to a copy of `ffn`.
MergedFfn merge_lora(const backbone::FfnParams& ffn, std::span<const ExpertAdapter> experts,
                     std::span<const double> weights);

Tensor merged_ffn_forward(const MergedFfn& merged, const Tensor& h);

}  // namespace mome::experts
