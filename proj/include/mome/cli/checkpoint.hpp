// SPDX-License-Identifier: Apache-2.0
//
// On-disk checkpoints. A checkpoint is a directory holding manifest.json and
// tensors.bin; the blob is the little-endian f64 payload of every tensor,
// concatenated in manifest order. docs/formats.md describes both files.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mome/backbone/transformer.hpp"
#include "mome/training/pipeline.hpp"

namespace mome::cli {

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kBlobFile = "tensors.bin";

enum class CheckpointKind { backbone, source, target };

std::string to_string(CheckpointKind kind);

struct Checkpoint {
  CheckpointKind kind = CheckpointKind::backbone;
  int stage = 0;  // 0 for the pretrained backbone
  std::uint64_t seed = 0;
  // Compact JSON snapshot of the configuration that produced the checkpoint.
  std::string config_json = "{}";
  std::map<std::string, std::string> meta;
  std::vector<backbone::NamedTensor> tensors;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Corrupt or truncated payload; names the first offending tensor.
class ChecksumError : public CheckpointError {
 public:
  ChecksumError(const std::string& what, std::string tensor) : CheckpointError(what), tensor_(std::move(tensor)) {}
  const std::string& tensor() const { return tensor_; }

 private:
  std::string tensor_;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& dir);
// Reads and verifies every tensor before returning; nothing is returned on
// any failure.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Combined digest of a list of named tensors (names, shapes and payloads).
std::string tensor_set_checksum(std::span<const backbone::NamedTensor> tensors);

Checkpoint backbone_checkpoint(const backbone::Transformer& model, std::uint64_t seed, std::string config_json);
backbone::Transformer backbone_from_checkpoint(const Checkpoint& checkpoint);

Checkpoint source_checkpoint(const training::SourceArtifact& source, const backbone::ModelConfig& model,
                             std::uint64_t seed, std::string config_json);
training::SourceArtifact source_from_checkpoint(const Checkpoint& checkpoint);

Checkpoint target_checkpoint(const training::TargetArtifact& target, std::span<const training::SourceArtifact> sources,
                             const backbone::ModelConfig& model, std::uint64_t seed, std::string config_json);
// Rebuilds the target artifact and checks that `sources` are exactly the
// artifacts it was trained against (ids, order and checksums).
training::TargetArtifact target_from_checkpoint(const Checkpoint& checkpoint,
                                                std::span<const training::SourceArtifact> sources);

}  // namespace mome::cli
