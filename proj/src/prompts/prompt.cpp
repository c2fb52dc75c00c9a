// SPDX-License-Identifier: Apache-2.0

#include "mome/prompts/prompt.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "mome/autodiff/ops.hpp"
#include "mome/common/rng.hpp"
#include "mome/tasks/tokenizer.hpp"

namespace mome::prompts {

std::vector<TaskDescription> load_descriptions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read task descriptions from " + path.string());
  std::vector<TaskDescription> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected task_id<TAB>description");
    }
    out.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return out;
}

void save_descriptions(const std::vector<TaskDescription>& descriptions, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& d : descriptions) out << d.task_id << '\t' << d.text << '\n';
}

TaskPrompt init_prompt_from_description(const TaskDescription& description, const EmbedFn& embed,
                                        std::size_t max_len) {
  const auto ids = tasks::tokenize(description.text);
  if (ids.empty()) {
    throw std::invalid_argument("task '" + description.task_id + "': description tokenizes to nothing");
  }
  if (ids.size() > max_len) {
    throw std::length_error("task '" + description.task_id + "': description has " + std::to_string(ids.size()) +
                            " tokens, more than max_len " + std::to_string(max_len));
  }
  return {embed(ids).clone(true), description.task_id};
}

TaskPrompt init_prompt_from_random_tokens(const std::string& task_id, std::size_t length, const EmbedFn& embed,
                                          std::uint64_t seed) {
  if (length == 0) throw std::invalid_argument("random prompt length must be at least 1");
  Rng rng(seed);
  std::vector<int> ids(length);
  for (auto& id : ids) id = 3 + static_cast<int>(rng.uniform_below(tasks::kAlphabet.size()));
  return {embed(ids).clone(true), task_id};
}

Tensor correlation_attention(const Tensor& target, const Tensor& source, bool scale) {
  if (source.rank() != 2 || source.rows() == 0) {
    throw std::invalid_argument("correlation_attention: source prompt has no rows");
  }
  if (target.rank() != 2 || target.cols() != source.cols()) {
    throw ad::DimensionError("correlation_attention: target " + ad::shape_to_string(target.shape()) + " vs source " +
                             ad::shape_to_string(source.shape()));
  }
  Tensor scores = ad::matmul(target, ad::transpose(source));
  if (scale) scores = ad::scale(scores, 1.0 / std::sqrt(static_cast<double>(target.cols())));
  return ad::matmul(ad::softmax_lastdim(scores), source);
}

Tensor build_correlation_prompt(const PromptBank& bank, bool scale) {
  if (bank.source_prompts.empty()) throw std::invalid_argument("build_correlation_prompt: no source prompts");
  std::vector<Tensor> terms;
  terms.reserve(bank.source_prompts.size() + 1);
  terms.push_back(bank.target_prompt.matrix);
  for (const auto& p : bank.source_prompts) terms.push_back(correlation_attention(bank.target_prompt.matrix, p.matrix, scale));
  return ad::add_n(terms);
}

}  // namespace mome::prompts
