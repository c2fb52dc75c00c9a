// SPDX-License-Identifier: Apache-2.0
//
// CSV outputs. Column order is part of the interface; docs/formats.md lists
// every schema. Reals are printed with 17 significant digits so that files
// from identical runs compare byte for byte.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mome/training/pipeline.hpp"

namespace mome::cli {

struct AblationRow {
  std::string arm;
  std::uint64_t seed = 0;
  double exact_match = 0.0;
  double token_accuracy = 0.0;
  std::size_t trainable_params = 0;
};

struct FewShotRow {
  std::string arm;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::string sample_digest;
  double exact_match = 0.0;
  double token_accuracy = 0.0;
};

// One row per (task, expert): gate weight averaged over layers and examples.
struct GateSummaryRow {
  std::string task;
  std::string expert;
  double weight = 0.0;
};

// One row per (task, layer, expert).
struct GateLayerRow {
  std::string task;
  std::size_t layer = 0;
  std::string expert;
  double weight = 0.0;
};

struct EvalRow {
  std::string task;
  std::string split;
  double exact_match = 0.0;
  double token_accuracy = 0.0;
};

std::string format_real(double v);

void write_metrics_csv(const std::filesystem::path& path, std::span<const training::StepMetrics> rows);
void write_gates_csv(const std::filesystem::path& path, std::span<const training::GateTrace> rows);
void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows);
void write_fewshot_csv(const std::filesystem::path& path, std::span<const FewShotRow> rows);
void write_gate_summary_csv(const std::filesystem::path& path, std::span<const GateSummaryRow> rows);
void write_gate_layers_csv(const std::filesystem::path& path, std::span<const GateLayerRow> rows);
void write_eval_csv(const std::filesystem::path& path, std::span<const EvalRow> rows);

// Minimal reader for the files above: header row plus data rows, split on
// commas (no quoting is ever emitted).
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);

}  // namespace mome::cli
