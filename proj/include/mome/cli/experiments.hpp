// SPDX-License-Identifier: Apache-2.0
//
// Experiment drivers shared by the command-line tool and the acceptance
// runner: source training per prompt variant, the ablation matrix, the
// few-shot sweep and gate summaries.

#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <vector>

#include "mome/cli/config.hpp"
#include "mome/cli/csv.hpp"
#include "mome/training/pipeline.hpp"

namespace mome::cli {

std::vector<training::SourceArtifact> train_sources(const backbone::Transformer& backbone,
                                                    std::span<const tasks::SyntheticTask> tasks,
                                                    const training::TrainConfig& stage1, training::PromptInit init,
                                                    std::ostream* log = nullptr);

// Source artifacts per prompt variant, trained on first use.
class SourceCache {
 public:
  SourceCache(const backbone::Transformer& backbone, std::vector<tasks::SyntheticTask> tasks,
              training::TrainConfig stage1, std::ostream* log = nullptr);

  const std::vector<training::SourceArtifact>& get(training::PromptInit init);
  void put(training::PromptInit init, std::vector<training::SourceArtifact> sources);
  bool contains(training::PromptInit init) const { return cache_.contains(init); }

 private:
  const backbone::Transformer& backbone_;
  std::vector<tasks::SyntheticTask> tasks_;
  training::TrainConfig stage1_;
  std::ostream* log_;
  std::map<training::PromptInit, std::vector<training::SourceArtifact>> cache_;
};

std::size_t parameter_count(std::span<const backbone::NamedTensor> tensors);

struct ArmRun {
  AblationArm arm = AblationArm::full;
  std::uint64_t seed = 0;
  training::Stage2Result result;
  tasks::EvalResult eval;
  std::size_t trainable_params = 0;
};

// Stage 2 for one ablation arm; `stage2.seed` selects the run.
ArmRun run_arm(const backbone::Transformer& backbone, SourceCache& sources, const tasks::SyntheticTask& target,
               AblationArm arm, const training::TrainConfig& stage2, const tasks::Dataset& test,
               const training::Stage2Options& options = {});

// The four arms over every seed, arm-major.
std::vector<AblationRow> run_ablation(const backbone::Transformer& backbone, SourceCache& sources,
                                      const tasks::SyntheticTask& target, const training::TrainConfig& stage2,
                                      std::span<const std::uint64_t> seeds, const tasks::Dataset& test,
                                      std::ostream* log = nullptr);

// Mean exact match per arm, in all_arms() order (arms absent from `rows`
// are skipped).
std::vector<std::pair<std::string, double>> arm_means(std::span<const AblationRow> rows);

// Few-shot sweep. For each seed and k the same examples are drawn from the
// same training pool for every arm.
std::vector<FewShotRow> run_fewshot(const backbone::Transformer& backbone, SourceCache& sources,
                                    const tasks::SyntheticTask& target, const training::TrainConfig& stage2,
                                    const FewShotConfig& few_shot, std::span<const std::uint64_t> seeds,
                                    const tasks::Dataset& test, std::ostream* log = nullptr);

// The training set a few-shot run with (k, seed) uses.
tasks::Dataset few_shot_training_set(const tasks::SyntheticTask& target, const FewShotConfig& few_shot, std::size_t k,
                                     std::uint64_t seed);

struct GateExport {
  std::vector<GateSummaryRow> summary;
  std::vector<GateLayerRow> layers;
};

GateExport export_gates(const training::TargetModel& model, const tasks::Dataset& dataset);

}  // namespace mome::cli
