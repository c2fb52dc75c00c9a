// SPDX-License-Identifier: Apache-2.0
//
// Subcommands of the mome tool. Each reads an experiment config and works
// inside the resolved output directory:
//
//   <out>/config.resolved.json
//   <out>/backbone/                 pretrained backbone checkpoint
//   <out>/sources/<task_id>/        stage-1 checkpoint + metrics.csv
//   <out>/target/                   stage-2 checkpoint + metrics.csv + gates.csv
//   <out>/evaluation.csv, ablation.csv, fewshot.csv, gate_summary.csv, gate_layers.csv

#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "mome/cli/config.hpp"

namespace mome::cli {

struct OutputLayout {
  std::filesystem::path root;

  std::filesystem::path backbone() const { return root / "backbone"; }
  std::filesystem::path sources() const { return root / "sources"; }
  std::filesystem::path source(const std::string& task_id) const { return sources() / task_id; }
  std::filesystem::path target() const { return root / "target"; }
};

std::vector<std::string> command_names();

// Returns the process exit code: 0 on success, 1 on a runtime failure, 2 on
// an invalid config or unknown command.
int run_command(const std::string& command, const std::filesystem::path& config_path, std::ostream& out,
                std::ostream& err);

int run_command(const std::string& command, const ExperimentConfig& config, std::ostream& out, std::ostream& err);

}  // namespace mome::cli
