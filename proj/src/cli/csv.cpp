// SPDX-License-Identifier: Apache-2.0

#include "mome/cli/csv.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace mome::cli {

namespace {

std::ofstream open_csv(const std::filesystem::path& path, const char* header) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << header << '\n';
  return out;
}

void check_field(const std::string& s) {
  if (s.find_first_of(",\n\"") != std::string::npos) {
    throw std::invalid_argument("CSV field '" + s + "' contains a comma, quote or newline");
  }
}

}  // namespace

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const training::StepMetrics> rows) {
  auto out = open_csv(path, "step,nll,l_moe,total,lr");
  for (const auto& r : rows) {
    out << r.step << ',' << format_real(r.nll) << ',' << format_real(r.l_moe) << ',' << format_real(r.total) << ','
        << format_real(r.lr) << '\n';
  }
}

void write_gates_csv(const std::filesystem::path& path, std::span<const training::GateTrace> rows) {
  auto out = open_csv(path, "step,layer,expert,weight");
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.weights.size(); ++i) {
      out << r.step << ',' << r.layer << ',' << i << ',' << format_real(r.weights[i]) << '\n';
    }
  }
}

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows) {
  auto out = open_csv(path, "arm,seed,exact_match,token_accuracy,trainable_params");
  for (const auto& r : rows) {
    check_field(r.arm);
    out << r.arm << ',' << r.seed << ',' << format_real(r.exact_match) << ',' << format_real(r.token_accuracy) << ','
        << r.trainable_params << '\n';
  }
}

void write_fewshot_csv(const std::filesystem::path& path, std::span<const FewShotRow> rows) {
  auto out = open_csv(path, "arm,k,seed,sample_digest,exact_match,token_accuracy");
  for (const auto& r : rows) {
    check_field(r.arm);
    check_field(r.sample_digest);
    out << r.arm << ',' << r.k << ',' << r.seed << ',' << r.sample_digest << ',' << format_real(r.exact_match) << ','
        << format_real(r.token_accuracy) << '\n';
  }
}

void write_gate_summary_csv(const std::filesystem::path& path, std::span<const GateSummaryRow> rows) {
  auto out = open_csv(path, "task,expert,weight");
  for (const auto& r : rows) {
    check_field(r.task);
    check_field(r.expert);
    out << r.task << ',' << r.expert << ',' << format_real(r.weight) << '\n';
  }
}

void write_gate_layers_csv(const std::filesystem::path& path, std::span<const GateLayerRow> rows) {
  auto out = open_csv(path, "task,layer,expert,weight");
  for (const auto& r : rows) {
    check_field(r.task);
    check_field(r.expert);
    out << r.task << ',' << r.layer << ',' << r.expert << ',' << format_real(r.weight) << '\n';
  }
}

void write_eval_csv(const std::filesystem::path& path, std::span<const EvalRow> rows) {
  auto out = open_csv(path, "task,split,exact_match,token_accuracy");
  for (const auto& r : rows) {
    check_field(r.task);
    out << r.task << ',' << r.split << ',' << format_real(r.exact_match) << ',' << format_real(r.token_accuracy)
        << '\n';
  }
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto pos = line.find(',', start);
      fields.push_back(line.substr(start, pos - start));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

}  // namespace mome::cli
