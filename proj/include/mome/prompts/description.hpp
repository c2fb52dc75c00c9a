// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace mome::prompts {

// Natural-language task definition used to initialize a task prompt.
struct TaskDescription {
  std::string task_id;
  std::string text;

  bool operator==(const TaskDescription&) const = default;
};

// Plain-text manifest, one `task_id<TAB>description` per line.
std::vector<TaskDescription> load_descriptions(const std::filesystem::path& path);
void save_descriptions(const std::vector<TaskDescription>& descriptions, const std::filesystem::path& path);

}  // namespace mome::prompts
