// SPDX-License-Identifier: Apache-2.0

#include "mome/cli/experiments.hpp"

#include <algorithm>

namespace mome::cli {

std::vector<training::SourceArtifact> train_sources(const backbone::Transformer& backbone,
                                                    std::span<const tasks::SyntheticTask> tasks,
                                                    const training::TrainConfig& stage1, training::PromptInit init,
                                                    std::ostream* log) {
  std::vector<training::SourceArtifact> out;
  for (const auto& t : tasks) {
    auto r = training::train_stage1(backbone, t, stage1, init);
    if (log) {
      *log << "stage1 " << t.task_id << " (" << training::to_string(init) << " prompt): final nll "
           << r.metrics.back().nll << '\n';
    }
    out.push_back(std::move(r.artifact));
  }
  return out;
}

SourceCache::SourceCache(const backbone::Transformer& backbone, std::vector<tasks::SyntheticTask> tasks,
                         training::TrainConfig stage1, std::ostream* log)
    : backbone_(backbone), tasks_(std::move(tasks)), stage1_(stage1), log_(log) {}

const std::vector<training::SourceArtifact>& SourceCache::get(training::PromptInit init) {
  auto it = cache_.find(init);
  if (it == cache_.end()) it = cache_.emplace(init, train_sources(backbone_, tasks_, stage1_, init, log_)).first;
  return it->second;
}

void SourceCache::put(training::PromptInit init, std::vector<training::SourceArtifact> sources) {
  for (const auto& s : sources) {
    if (s.prompt_init != init) {
      throw std::invalid_argument("source '" + s.task_id + "' was trained with a " + training::to_string(s.prompt_init) +
                                  " prompt, not " + training::to_string(init));
    }
  }
  cache_[init] = std::move(sources);
}

std::size_t parameter_count(std::span<const backbone::NamedTensor> tensors) {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.tensor.size();
  return n;
}

ArmRun run_arm(const backbone::Transformer& backbone, SourceCache& sources, const tasks::SyntheticTask& target,
               AblationArm arm, const training::TrainConfig& stage2, const tasks::Dataset& test,
               const training::Stage2Options& options) {
  training::Stage2Options opts = options;
  opts.flags = arm_flags(arm);
  std::vector<training::SourceArtifact> used;
  if (arm_uses_sources(arm)) used = sources.get(arm_source_init(arm));
  ArmRun run;
  run.arm = arm;
  run.seed = stage2.seed;
  run.result = training::train_stage2(backbone, target, used, stage2, opts);
  training::TargetModel model(backbone, used, run.result.artifact);
  run.eval = model.evaluate(test);
  run.trainable_params = parameter_count(model.trainables());
  return run;
}

std::vector<AblationRow> run_ablation(const backbone::Transformer& backbone, SourceCache& sources,
                                      const tasks::SyntheticTask& target, const training::TrainConfig& stage2,
                                      std::span<const std::uint64_t> seeds, const tasks::Dataset& test,
                                      std::ostream* log) {
  std::vector<AblationRow> rows;
  for (auto arm : all_arms()) {
    for (auto seed : seeds) {
      auto cfg = stage2;
      cfg.seed = seed;
      training::Stage2Options opts;
      opts.gate_trace_limit = 1;
      const ArmRun run = run_arm(backbone, sources, target, arm, cfg, test, opts);
      rows.push_back({to_string(arm), seed, run.eval.exact_match, run.eval.token_accuracy, run.trainable_params});
      if (log) {
        *log << "ablate " << to_string(arm) << " seed " << seed << ": exact_match " << run.eval.exact_match
             << ", token_accuracy " << run.eval.token_accuracy << '\n';
      }
    }
  }
  return rows;
}

std::vector<std::pair<std::string, double>> arm_means(std::span<const AblationRow> rows) {
  std::vector<std::pair<std::string, double>> out;
  for (auto arm : all_arms()) {
    const std::string name = to_string(arm);
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows) {
      if (r.arm == name) {
        sum += r.exact_match;
        ++n;
      }
    }
    if (n > 0) out.emplace_back(name, sum / static_cast<double>(n));
  }
  return out;
}

tasks::Dataset few_shot_training_set(const tasks::SyntheticTask& target, const FewShotConfig& few_shot, std::size_t k,
                                     std::uint64_t seed) {
  const tasks::Dataset pool = tasks::gen_examples(target, few_shot.pool, tasks::Split::train);
  return tasks::few_shot_sample(pool, k, seed);
}

std::vector<FewShotRow> run_fewshot(const backbone::Transformer& backbone, SourceCache& sources,
                                    const tasks::SyntheticTask& target, const training::TrainConfig& stage2,
                                    const FewShotConfig& few_shot, std::span<const std::uint64_t> seeds,
                                    const tasks::Dataset& test, std::ostream* log) {
  std::vector<FewShotRow> rows;
  for (auto k : few_shot.k) {
    for (auto seed : seeds) {
      const tasks::Dataset sample = few_shot_training_set(target, few_shot, k, seed);
      const std::string digest = tasks::sample_digest(sample);
      for (auto arm : few_shot.arms) {
        auto cfg = stage2;
        cfg.seed = seed;
        cfg.steps = few_shot.steps;
        cfg.warmup_steps = std::min(cfg.warmup_steps, few_shot.steps / 10);
        training::Stage2Options opts;
        opts.train_override = sample;
        opts.gate_trace_limit = 1;
        const ArmRun run = run_arm(backbone, sources, target, arm, cfg, test, opts);
        rows.push_back({to_string(arm), k, seed, digest, run.eval.exact_match, run.eval.token_accuracy});
        if (log) {
          *log << "fewshot k=" << k << " seed " << seed << " " << to_string(arm) << ": exact_match "
               << run.eval.exact_match << '\n';
        }
      }
    }
  }
  return rows;
}

GateExport export_gates(const training::TargetModel& model, const tasks::Dataset& dataset) {
  GateExport out;
  const auto stats = model.gate_statistics(dataset);
  if (stats.mean_weights.empty()) return out;
  const auto& task = model.artifact().task_id;
  const auto& ids = model.artifact().source_task_ids;
  std::vector<double> overall(ids.size(), 0.0);
  for (std::size_t l = 0; l < stats.mean_weights.size(); ++l) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      out.layers.push_back({task, l, ids[i], stats.mean_weights[l][i]});
      overall[i] += stats.mean_weights[l][i];
    }
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out.summary.push_back({task, ids[i], overall[i] / static_cast<double>(stats.mean_weights.size())});
  }
  return out;
}

}  // namespace mome::cli
