// SPDX-License-Identifier: Apache-2.0
//
// Task prompts initialized from natural-language descriptions, and the
// correlation prompt that mixes a new target prompt with frozen source
// prompts through single-head attention.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mome/autodiff/tensor.hpp"
#include "mome/prompts/description.hpp"

namespace mome::prompts {

using ad::Tensor;

struct TaskPrompt {
  Tensor matrix;  // m × d
  std::string task_id;

  std::size_t length() const { return matrix.rows(); }
};

struct PromptBank {
  std::vector<TaskPrompt> source_prompts;  // frozen
  TaskPrompt target_prompt;                // trainable
};

using EmbedFn = std::function<Tensor(std::span<const int>)>;

// Rows are the embeddings of the description's tokens; the result is a
// trainable leaf that shares no storage with the embedding table.
TaskPrompt init_prompt_from_description(const TaskDescription& description, const EmbedFn& embed,
                                        std::size_t max_len);

// Same length, but the tokens are drawn uniformly from the printable symbols.
TaskPrompt init_prompt_from_random_tokens(const std::string& task_id, std::size_t length, const EmbedFn& embed,
                                          std::uint64_t seed);

// softmax(P_new·P_sourceᵀ / √d)·P_source, single head with no projections.
// Without scaling the softmax argument is the raw inner product.
Tensor correlation_attention(const Tensor& target, const Tensor& source, bool scale = true);

// P_new + Σ_i correlation_attention(P_new, P_i).
Tensor build_correlation_prompt(const PromptBank& bank, bool scale = true);

}  // namespace mome::prompts
