// SPDX-License-Identifier: Apache-2.0

#include "mome/tasks/synthetic.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "mome/common/checksum.hpp"
#include "mome/common/rng.hpp"
#include "mome/tasks/tokenizer.hpp"

namespace mome::tasks {

namespace {

constexpr std::size_t kSplitStride = std::size_t{1} << 24;

std::size_t split_offset(Split split) {
  switch (split) {
    case Split::train:
      return 0;
    case Split::dev:
      return kSplitStride;
    case Split::test:
      return 2 * kSplitStride;
  }
  return 0;
}

// Number of distinct inputs the task can produce, saturated at `cap`.
std::size_t distinct_inputs(const SyntheticTask& task, std::size_t cap) {
  const std::size_t v = task.vocab_subset.size();
  std::size_t total = 0;
  for (std::size_t len = task.params.min_len; len <= task.params.max_len; ++len) {
    std::size_t count = 1;
    for (std::size_t i = 0; i < len && count < cap; ++i) count *= v;
    total += count;
    if (total >= cap) return cap;
  }
  return total;
}

}  // namespace

std::string to_string(Family family) {
  switch (family) {
    case Family::copy:
      return "copy";
    case Family::reverse:
      return "reverse";
    case Family::token_map:
      return "token_map";
    case Family::sort:
      return "sort";
    case Family::modular_add:
      return "modular_add";
  }
  return "unknown";
}

Family family_from_string(const std::string& name) {
  for (Family f : {Family::copy, Family::reverse, Family::token_map, Family::sort, Family::modular_add}) {
    if (to_string(f) == name) return f;
  }
  throw std::invalid_argument("unknown task family '" + name + "'");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::dev:
      return "dev";
    case Split::test:
      return "test";
  }
  return "unknown";
}

void validate_task(const SyntheticTask& task) {
  const auto fail = [&](const std::string& why) {
    throw std::invalid_argument("task '" + task.task_id + "': " + why);
  };
  if (task.task_id.empty()) throw std::invalid_argument("task has an empty task_id");
  if (task.vocab_subset.empty()) fail("vocab_subset is empty");
  std::set<char> seen;
  for (char c : task.vocab_subset) {
    token_id(c);
    if (!seen.insert(c).second) fail(std::string("vocab_subset repeats '") + c + "'");
  }
  const auto& p = task.params;
  if (p.min_len < 1 || p.max_len < p.min_len) fail("length range must satisfy 1 <= min_len <= max_len");
  if (task.family == Family::token_map) {
    if (p.permutation.size() != task.vocab_subset.size()) fail("permutation size differs from vocab_subset size");
    std::vector<int> sorted = p.permutation;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i)
      if (sorted[i] != static_cast<int>(i)) fail("permutation is not a permutation of 0..n-1");
  }
  if (task.family == Family::modular_add) {
    if (p.modulus < 2 || p.modulus > 10) fail("modulus must lie in [2, 10]");
    if (task.vocab_subset.size() != static_cast<std::size_t>(p.modulus)) fail("vocab_subset must list the modulus digits");
    for (int d = 0; d < p.modulus; ++d)
      if (task.vocab_subset[static_cast<std::size_t>(d)] != static_cast<char>('0' + d))
        fail("vocab_subset must be the digits 0..modulus-1 in order");
  }
}

Example gen_example(const SyntheticTask& task, Split split, std::size_t index) {
  Rng rng(mix_seed(task.seed, split_offset(split) + index));
  const auto& p = task.params;
  const std::size_t len = p.min_len + static_cast<std::size_t>(rng.uniform_below(p.max_len - p.min_len + 1));
  std::vector<std::size_t> symbols(len);
  for (auto& s : symbols) s = static_cast<std::size_t>(rng.uniform_below(task.vocab_subset.size()));

  Example ex;
  ex.index = index;
  ex.input.reserve(len);
  for (auto s : symbols) ex.input.push_back(token_id(task.vocab_subset[s]));
  switch (task.family) {
    case Family::copy:
      ex.target = ex.input;
      break;
    case Family::reverse:
      ex.target.assign(ex.input.rbegin(), ex.input.rend());
      break;
    case Family::token_map:
      for (auto s : symbols) ex.target.push_back(token_id(task.vocab_subset[static_cast<std::size_t>(p.permutation[s])]));
      break;
    case Family::sort:
      ex.target = ex.input;
      std::sort(ex.target.begin(), ex.target.end());
      break;
    case Family::modular_add:
      for (auto s : symbols) {
        const int digit = (static_cast<int>(s) + p.addend) % p.modulus;
        ex.target.push_back(token_id(static_cast<char>('0' + digit)));
      }
      break;
  }
  return ex;
}

Dataset gen_examples(const SyntheticTask& task, std::size_t n, Split split) {
  if (n < 1) throw std::invalid_argument("gen_examples: n must be at least 1");
  validate_task(task);
  if (task.vocab_subset.size() < 2 || distinct_inputs(task, n) < n) {
    throw std::invalid_argument("task '" + task.task_id + "': vocab_subset too small for " + std::to_string(n) +
                                " examples of length " + std::to_string(task.params.min_len) + ".." +
                                std::to_string(task.params.max_len));
  }
  Dataset d;
  d.split = split;
  d.pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) d.pairs.push_back(gen_example(task, split, i));
  return d;
}

Dataset few_shot_sample(const Dataset& dataset, std::size_t k, std::uint64_t seed) {
  if (k > dataset.size()) {
    throw std::invalid_argument("few_shot_sample: k=" + std::to_string(k) + " exceeds dataset size " +
                                std::to_string(dataset.size()));
  }
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  Dataset out;
  out.split = dataset.split;
  out.pairs.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.pairs.push_back(dataset.pairs[order[i]]);
  return out;
}

std::string sample_digest(const Dataset& dataset) {
  Fnv1a64 h;
  for (const auto& ex : dataset.pairs) {
    const std::uint64_t idx = ex.index;
    h.update(&idx, sizeof idx);
  }
  return h.hex();
}

void write_tsv(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& ex : dataset.pairs) out << detokenize(ex.input) << '\t' << detokenize(ex.target) << '\n';
}

EvalResult evaluate(const DecodeFn& decode, const TeacherForcedFn& target_argmax, const Dataset& dataset) {
  EvalResult r;
  if (dataset.size() == 0) return r;
  std::size_t exact = 0, correct_tokens = 0, total_tokens = 0;
  for (const auto& ex : dataset.pairs) {
    if (decode(ex) == ex.target) ++exact;
    const auto predicted = target_argmax(ex);
    for (std::size_t i = 0; i <= ex.target.size(); ++i) {
      const int expected = i < ex.target.size() ? ex.target[i] : kEosId;
      if (i < predicted.size() && predicted[i] == expected) ++correct_tokens;
      ++total_tokens;
    }
  }
  r.exact_match = static_cast<double>(exact) / static_cast<double>(dataset.size());
  r.token_accuracy = static_cast<double>(correct_tokens) / static_cast<double>(total_tokens);
  return r;
}

namespace {

std::vector<int> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<int>(perm));
  return perm;
}

SyntheticTask make_task(std::string id, Family family, std::string subset, std::string description,
                        std::uint64_t seed) {
  SyntheticTask t;
  t.task_id = std::move(id);
  t.family = family;
  t.vocab_subset = std::move(subset);
  t.description = {t.task_id, std::move(description)};
  t.seed = seed;
  return t;
}

}  // namespace

std::vector<SyntheticTask> default_source_tasks() {
  const std::string letters = "abcdefgh";
  std::vector<SyntheticTask> tasks;
  tasks.push_back(make_task("copy", Family::copy, letters, "copy the sequence.", 101));
  tasks.push_back(make_task("reverse", Family::reverse, letters, "reverse the sequence.", 102));
  auto map_a = make_task("map_a", Family::token_map, letters, "substitute each symbol, table a.", 103);
  map_a.params.permutation = seeded_permutation(letters.size(), 7001);
  tasks.push_back(map_a);
  auto map_b = make_task("map_b", Family::token_map, letters, "substitute each symbol, table b.", 104);
  map_b.params.permutation = seeded_permutation(letters.size(), 7002);
  tasks.push_back(map_b);
  tasks.push_back(make_task("sort", Family::sort, letters, "sort the symbols.", 105));
  auto mod = make_task("modadd", Family::modular_add, "0123456", "add three to each digit mod 7.", 106);
  mod.params.modulus = 7;
  mod.params.addend = 3;
  tasks.push_back(mod);
  return tasks;
}

SyntheticTask identical_target(const SyntheticTask& source, const std::string& task_id) {
  SyntheticTask t = source;
  t.task_id = task_id;
  t.description.task_id = task_id;
  t.seed = mix_seed(source.seed, 0x7a7a);
  return t;
}

SyntheticTask related_token_map(const SyntheticTask& source, std::size_t shared_prefix, const std::string& task_id,
                                const std::string& description) {
  if (source.family != Family::token_map) throw std::invalid_argument("related_token_map needs a token_map source");
  const auto& base = source.params.permutation;
  if (shared_prefix > base.size() || base.size() - shared_prefix == 1) {
    throw std::invalid_argument("related_token_map: cannot change exactly one symbol of a permutation");
  }
  SyntheticTask t = source;
  t.task_id = task_id;
  t.description = {task_id, description};
  t.seed = mix_seed(source.seed, 0x5e1a7ed + shared_prefix);
  // Rotating the tail moves every remaining image, so the tasks agree on
  // exactly `shared_prefix` symbols.
  auto& perm = t.params.permutation;
  if (base.size() > shared_prefix) std::rotate(perm.begin() + static_cast<std::ptrdiff_t>(shared_prefix),
                                               perm.begin() + static_cast<std::ptrdiff_t>(shared_prefix) + 1, perm.end());
  return t;
}

double mapping_overlap(const SyntheticTask& a, const SyntheticTask& b) {
  if (a.family != Family::token_map || b.family != Family::token_map || a.vocab_subset != b.vocab_subset) {
    throw std::invalid_argument("mapping_overlap needs two token_map tasks over the same vocabulary");
  }
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.params.permutation.size(); ++i) same += a.params.permutation[i] == b.params.permutation[i];
  return static_cast<double>(same) / static_cast<double>(a.params.permutation.size());
}

}  // namespace mome::tasks
