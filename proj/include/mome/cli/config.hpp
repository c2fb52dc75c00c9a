// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: a JSON document describing the model, the
// per-stage training settings, the source and target tasks, the ablation
// flags and the few-shot sweep.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mome/backbone/transformer.hpp"
#include "mome/tasks/synthetic.hpp"
#include "mome/training/pipeline.hpp"

namespace mome::cli {

enum class AblationArm { full, no_description, no_correlation, no_correlation_no_moe };

std::string to_string(AblationArm arm);
AblationArm ablation_arm_from_string(const std::string& name);
std::vector<AblationArm> all_arms();
training::AblationFlags arm_flags(AblationArm arm);
// How the arm's source prompts are initialized in stage 1.
training::PromptInit arm_source_init(AblationArm arm);
bool arm_uses_sources(AblationArm arm);

struct FewShotConfig {
  std::vector<std::size_t> k = {4, 16, 32};
  std::size_t steps = 100;
  // Size of the training pool the k examples are drawn from.
  std::size_t pool = 1000;
  std::vector<AblationArm> arms = {AblationArm::full, AblationArm::no_description, AblationArm::no_correlation,
                                   AblationArm::no_correlation_no_moe};
};

struct ExperimentConfig {
  backbone::ModelConfig model;
  training::TrainConfig pretrain = training::pretrain_defaults();
  training::TrainConfig stage1 = training::stage1_defaults();
  training::TrainConfig stage2 = training::stage2_defaults();
  std::vector<tasks::SyntheticTask> sources = tasks::default_source_tasks();
  tasks::SyntheticTask target;
  training::AblationFlags flags;
  std::optional<std::size_t> few_shot_k;
  FewShotConfig few_shot;
  std::vector<std::uint64_t> seeds = {42, 1024, 4096};
  std::size_t eval_examples = 200;
  std::filesystem::path output_dir = "runs/default";
};

// Every problem found in a config, one "key: message" entry each.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> issues);
  const std::vector<std::string>& issues() const { return issues_; }

 private:
  std::vector<std::string> issues_;
};

// The default experiment: six default sources, target related to map_a.
ExperimentConfig default_experiment_config();

ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
// Fully resolved config as JSON, with every default spelled out.
std::string experiment_config_to_json(const ExperimentConfig& config);

std::string train_config_to_json(const training::TrainConfig& cfg);
std::string model_config_to_json(const backbone::ModelConfig& cfg);
training::TrainConfig train_config_from_json(const std::string& json_text);
backbone::ModelConfig model_config_from_json(const std::string& json_text);

// output_dir, unless MOME_OUTPUT_DIR is set and non-empty.
std::filesystem::path resolve_output_dir(const ExperimentConfig& config);

}  // namespace mome::cli
