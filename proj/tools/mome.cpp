// SPDX-License-Identifier: Apache-2.0
//
// mome: train source experts, adapt to a target task, run the ablation
// matrix and few-shot sweeps, and export gate weights.

#include <iostream>

#include "CLI11.hpp"
#include "mome/cli/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Mixture of multi-task experts on a tiny encoder-decoder"};
  app.require_subcommand(1);
  std::string config_path;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"train-source", "Pretrain the backbone if needed, then train one prompt and expert set per source task"},
      {"train-target", "Adapt to the target task with frozen sources (gates, target adapters, LayerNorm)"},
      {"evaluate", "Evaluate saved source and target checkpoints on the test split"},
      {"ablate", "Run the four ablation arms over every configured seed"},
      {"fewshot", "Sweep few-shot adaptation over the configured k values"},
      {"export-gates", "Write per-expert mean gate weights of the saved target"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  }
  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();
  return mome::cli::run_command(command, config_path, std::cout, std::cerr);
}
