// SPDX-License-Identifier: Apache-2.0
//
// Backbone pretraining, source-task training (stage 1) and target-task
// adaptation (stage 2).
//
// Stage 1 trains one prompt and one expert per layer on a source task with
// the backbone frozen. Stage 2 freezes everything from stage 1 and trains the
// target prompt, the per-layer gates, the per-layer target adapters and the
// backbone's LayerNorm parameters.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mome/backbone/transformer.hpp"
#include "mome/experts/expert.hpp"
#include "mome/gating/gate.hpp"
#include "mome/prompts/prompt.hpp"
#include "mome/tasks/synthetic.hpp"
#include "mome/training/optimizer.hpp"
#include "mome/training/plugins.hpp"

namespace mome::training {

using backbone::NamedTensor;
using backbone::Transformer;

struct TrainConfig {
  int stage = 1;
  double learning_rate = 5e-4;
  std::size_t batch_size = 16;
  std::size_t warmup_steps = 50;
  // Optimizer steps; the desk-scale replacement for epochs.
  std::size_t steps = 500;
  std::size_t train_examples = 2000;
  double alpha = 0.1;
  double balance_sign = -1.0;
  std::uint64_t seed = 42;
  std::size_t expert_rank = 4;
  experts::ExpertKind kind = experts::ExpertKind::lora;
  std::size_t adapter_rank = 4;
  bool adapter_residual = true;
  bool scale_correlation_attention = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const;
  AdamWConfig adamw() const;
  // Passes over the training set implied by steps and batch size.
  double epochs() const;
};

TrainConfig pretrain_defaults();
TrainConfig stage1_defaults();
TrainConfig stage2_defaults();

class TrainingDivergedError : public std::runtime_error {
 public:
  TrainingDivergedError(const std::string& what, std::size_t step) : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct StepMetrics {
  std::size_t step = 0;
  double nll = 0.0;
  double l_moe = 0.0;
  double total = 0.0;
  double lr = 0.0;

  bool operator==(const StepMetrics&) const = default;
};

// Batch-mean gate weights of one layer at one step.
struct GateTrace {
  std::size_t step = 0;
  std::size_t layer = 0;
  std::vector<double> weights;
};

enum class PromptInit { description, random_tokens, none };

std::string to_string(PromptInit init);
PromptInit prompt_init_from_string(const std::string& name);

struct SourceArtifact {
  std::string task_id;
  std::string description_text;
  PromptInit prompt_init = PromptInit::description;
  std::optional<prompts::TaskPrompt> prompt;
  experts::SourceExperts experts;
};

struct AblationFlags {
  bool use_description = true;
  bool use_correlation = true;
  bool use_moe = true;

  bool operator==(const AblationFlags&) const = default;
};

struct TargetArtifact {
  std::string task_id;
  std::string description_text;
  // P_new before correlation; absent when the prompt module is ablated.
  std::optional<prompts::TaskPrompt> target_prompt;
  TargetModules modules;
  // Trained minus original value of every backbone LayerNorm tensor.
  std::vector<NamedTensor> layer_norm_deltas;
  std::vector<std::string> source_task_ids;
  AblationFlags flags;
  bool adapter_residual = true;
  bool scale_correlation_attention = true;
};

backbone::TokenBatch to_token_batch(const tasks::Example& example);

// Stage-1 trainables: the source prompt and every expert matrix.
std::vector<NamedTensor> trainable_set(const SourceArtifact& source);
// Stage-2 trainables: target prompt, gates, target adapters and the
// LayerNorm parameters of `model`.
std::vector<NamedTensor> trainable_set(const Transformer& model, const TargetArtifact& target);
// Every tensor a stage must leave untouched.
std::vector<NamedTensor> frozen_set(int stage, const Transformer& model, std::span<const SourceArtifact> sources);

std::map<std::string, std::string> checksums(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> source_tensors(const SourceArtifact& source);

struct PretrainResult {
  Transformer model;
  std::vector<StepMetrics> metrics;
};

// Full-parameter training of the backbone on copying random strings placed
// after a random-length prefix of symbol embeddings, which stands in for a
// pretrained language model that later receives prompts.
PretrainResult pretrain_backbone(const backbone::ModelConfig& config, const TrainConfig& cfg);

struct Stage1Result {
  SourceArtifact artifact;
  std::vector<StepMetrics> metrics;
};

Stage1Result train_stage1(const Transformer& backbone, const tasks::SyntheticTask& task, const TrainConfig& cfg,
                          PromptInit init = PromptInit::description);

// A backbone copy with a target artifact and its frozen sources attached.
class TargetModel {
 public:
  TargetModel(const Transformer& backbone, std::vector<SourceArtifact> sources, TargetArtifact artifact);

  const Transformer& backbone() const { return backbone_; }
  const TargetArtifact& artifact() const { return artifact_; }
  TargetArtifact& artifact() { return artifact_; }
  const std::vector<SourceArtifact>& sources() const { return sources_; }

  // The prompt prepended to the encoder input (undefined without one).
  ad::Tensor prompt() const;

  backbone::ForwardResult forward(const tasks::Example& example, TargetPlugins& plugins,
                                  const ad::Tensor& prompt) const;
  TargetPlugins make_plugins() const;

  std::vector<NamedTensor> trainables() const { return trainable_set(backbone_, artifact_); }
  // Re-derives the stored LayerNorm deltas from the current backbone copy.
  void refresh_layer_norm_deltas(const Transformer& original);

  tasks::EvalResult evaluate(const tasks::Dataset& dataset) const;

  // Per layer, per expert mean gate weight over the dataset, and the mean
  // per-example entropy of those weights.
  struct GateStats {
    std::vector<std::vector<double>> mean_weights;
    double mean_entropy = 0.0;
  };
  GateStats gate_statistics(const tasks::Dataset& dataset) const;

 private:
  Transformer backbone_;
  std::vector<SourceArtifact> sources_;
  std::vector<experts::SourceExperts> source_experts_;
  TargetArtifact artifact_;
};

struct Stage2Options {
  AblationFlags flags;
  // Replaces the generated training set (few-shot runs).
  std::optional<tasks::Dataset> train_override;
  // Stop recording gate traces after this many steps (0 = all steps).
  std::size_t gate_trace_limit = 0;
};

struct Stage2Result {
  TargetArtifact artifact;
  std::vector<StepMetrics> metrics;
  std::vector<GateTrace> gate_trace;
  // Per layer, per expert mean gate weight on held-out target examples.
  std::vector<std::vector<double>> final_gate_means;
  // Checksums of the backbone rebuilt from `artifact`.
  std::map<std::string, std::string> backbone_checksums;
};

Stage2Result train_stage2(const Transformer& backbone, const tasks::SyntheticTask& target,
                          std::span<const SourceArtifact> sources, const TrainConfig& cfg,
                          const Stage2Options& options = {});

// Initial (step-0) stage-2 artifact: zero gates, identity adapters, fresh
// target prompt, zero LayerNorm deltas.
TargetArtifact init_target_artifact(const Transformer& backbone, const tasks::SyntheticTask& target,
                                    std::span<const SourceArtifact> sources, const TrainConfig& cfg,
                                    const AblationFlags& flags);

tasks::EvalResult evaluate_source(const Transformer& backbone, const SourceArtifact& source,
                                  const tasks::Dataset& dataset);
tasks::EvalResult evaluate_backbone(const Transformer& backbone, const tasks::Dataset& dataset);

// Applies stored LayerNorm deltas to a backbone copy.
Transformer apply_layer_norm_deltas(const Transformer& backbone, std::span<const NamedTensor> deltas);

double weight_entropy(std::span<const double> weights);

}  // namespace mome::training
