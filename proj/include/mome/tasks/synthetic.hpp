// SPDX-License-Identifier: Apache-2.0
//
// Synthetic text-to-text task families. Every pair is a pure function of
// (family, params, seed, split, index).

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mome/prompts/description.hpp"

namespace mome::tasks {

enum class Family { copy, reverse, token_map, sort, modular_add };

std::string to_string(Family family);
Family family_from_string(const std::string& name);

struct TaskParams {
  // token_map: symbol vocab_subset[i] maps to vocab_subset[permutation[i]].
  std::vector<int> permutation;
  // modular_add: digit d maps to (d + addend) mod modulus.
  int modulus = 0;
  int addend = 0;
  std::size_t min_len = 3;
  std::size_t max_len = 8;

  bool operator==(const TaskParams&) const = default;
};

struct SyntheticTask {
  std::string task_id;
  Family family = Family::copy;
  std::string vocab_subset;
  prompts::TaskDescription description;
  TaskParams params;
  std::uint64_t seed = 0;
};

// Throws std::invalid_argument describing the first inconsistency.
void validate_task(const SyntheticTask& task);

enum class Split { train, dev, test };
std::string to_string(Split split);

struct Example {
  std::vector<int> input;
  std::vector<int> target;
  // Generation index within the split; identifies the example.
  std::size_t index = 0;

  bool operator==(const Example&) const = default;
};

struct Dataset {
  std::vector<Example> pairs;
  Split split = Split::train;

  std::size_t size() const { return pairs.size(); }
};

Example gen_example(const SyntheticTask& task, Split split, std::size_t index);
Dataset gen_examples(const SyntheticTask& task, std::size_t n, Split split);

// k examples chosen by a seeded shuffle of the dataset's positions. For a
// fixed (dataset, seed) the subsets for increasing k are nested prefixes of
// the same shuffle.
Dataset few_shot_sample(const Dataset& dataset, std::size_t k, std::uint64_t seed);

// Digest of the example indices, in dataset order.
std::string sample_digest(const Dataset& dataset);

void write_tsv(const Dataset& dataset, const std::filesystem::path& path);

struct EvalResult {
  double exact_match = 0.0;
  double token_accuracy = 0.0;
};

// decode: greedy output ids for an input (no BOS/EOS).
// target_argmax: teacher-forced argmax id per target position, where the
// positions are the target followed by EOS.
using DecodeFn = std::function<std::vector<int>(const Example&)>;
using TeacherForcedFn = std::function<std::vector<int>(const Example&)>;
EvalResult evaluate(const DecodeFn& decode, const TeacherForcedFn& target_argmax, const Dataset& dataset);

// The six default source tasks and target variants used by the experiments.
std::vector<SyntheticTask> default_source_tasks();
// Same family, params and description as `source`, under a new id.
SyntheticTask identical_target(const SyntheticTask& source, const std::string& task_id);
// token_map target whose permutation agrees with `source` on the first
// `shared_prefix` symbols and differs on every remaining one.
SyntheticTask related_token_map(const SyntheticTask& source, std::size_t shared_prefix, const std::string& task_id,
                                const std::string& description);

// Fraction of symbols on which two token_map tasks agree.
double mapping_overlap(const SyntheticTask& a, const SyntheticTask& b);

}  // namespace mome::tasks
