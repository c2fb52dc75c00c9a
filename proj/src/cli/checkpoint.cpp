// SPDX-License-Identifier: Apache-2.0

#include "mome/cli/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "mome/cli/config.hpp"
#include "mome/common/checksum.hpp"

namespace mome::cli {

using ad::Tensor;
using backbone::NamedTensor;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "mome-checkpoint";
constexpr int kVersion = 1;

void append_le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(bits & 0xFFu));
    bits >>= 8;
  }
}

double read_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<double>(bits);
}

std::string encode(std::span<const double> values) {
  std::string out;
  out.reserve(values.size() * 8);
  for (double v : values) append_le(out, v);
  return out;
}

std::string bytes_checksum(std::string_view bytes) {
  Fnv1a64 h;
  h.update(bytes);
  return h.hex();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("short write to " + path.string());
}

CheckpointKind kind_from_string(const std::string& s) {
  for (auto k : {CheckpointKind::backbone, CheckpointKind::source, CheckpointKind::target}) {
    if (to_string(k) == s) return k;
  }
  throw CheckpointError("unknown checkpoint kind '" + s + "'");
}

const std::string& meta_at(const Checkpoint& c, const std::string& key) {
  auto it = c.meta.find(key);
  if (it == c.meta.end()) throw CheckpointError("checkpoint meta lacks '" + key + "'");
  return it->second;
}

bool meta_flag(const Checkpoint& c, const std::string& key) {
  const auto& v = meta_at(c, key);
  if (v == "true") return true;
  if (v == "false") return false;
  throw CheckpointError("checkpoint meta '" + key + "' is not a boolean");
}

std::string flag(bool v) { return v ? "true" : "false"; }

void require_kind(const Checkpoint& c, CheckpointKind kind) {
  if (c.kind != kind) {
    throw CheckpointError("expected a " + to_string(kind) + " checkpoint, found " + to_string(c.kind));
  }
}

class TensorIndex {
 public:
  explicit TensorIndex(const Checkpoint& c) {
    for (const auto& t : c.tensors) by_name_[t.name] = t.tensor;
  }

  bool contains(const std::string& name) const { return by_name_.contains(name); }

  Tensor at(const std::string& name, const ad::Shape& shape) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw CheckpointError("checkpoint lacks tensor '" + name + "'");
    if (it->second.shape() != shape) {
      throw CheckpointError("tensor '" + name + "' has shape " + ad::shape_to_string(it->second.shape()) +
                            ", expected " + ad::shape_to_string(shape));
    }
    return it->second.clone();
  }

  Tensor at(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw CheckpointError("checkpoint lacks tensor '" + name + "'");
    return it->second.clone();
  }

 private:
  std::unordered_map<std::string, Tensor> by_name_;
};

std::vector<std::string> split_ids(const std::string& joined) {
  std::vector<std::string> out;
  if (joined.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = joined.find(',', start);
    out.push_back(joined.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

backbone::BlockKind layer_kind(const backbone::ModelConfig& m, std::size_t layer) {
  return layer < m.n_layers_enc ? backbone::BlockKind::encoder : backbone::BlockKind::decoder;
}

}  // namespace

std::string to_string(CheckpointKind kind) {
  switch (kind) {
    case CheckpointKind::backbone: return "backbone";
    case CheckpointKind::source: return "source";
    case CheckpointKind::target: return "target";
  }
  throw std::logic_error("unknown checkpoint kind");
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string blob;
  json entries = json::array();
  for (const auto& t : checkpoint.tensors) {
    const std::string bytes = encode(t.tensor.data());
    entries.push_back({{"name", t.name},
                       {"shape", t.tensor.shape()},
                       {"dtype", "f64"},
                       {"offset", blob.size()},
                       {"nbytes", bytes.size()},
                       {"checksum", bytes_checksum(bytes)}});
    blob += bytes;
  }
  json config;
  try {
    config = json::parse(checkpoint.config_json);
  } catch (const json::parse_error& e) {
    throw CheckpointError(std::string("config snapshot is not valid JSON: ") + e.what());
  }
  json manifest = {{"format", kFormat},
                   {"version", kVersion},
                   {"kind", to_string(checkpoint.kind)},
                   {"stage", checkpoint.stage},
                   {"seed", checkpoint.seed},
                   {"config", config},
                   {"meta", checkpoint.meta},
                   {"blob", {{"file", kBlobFile}, {"nbytes", blob.size()}, {"checksum", bytes_checksum(blob)}}},
                   {"tensors", entries}};
  write_file(dir / kBlobFile, blob);
  write_file(dir / kManifestFile, manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir / kManifestFile));
  } catch (const json::exception& e) {
    throw CheckpointError("unreadable manifest in " + dir.string() + ": " + e.what());
  }
  const std::string blob = read_file(dir / kBlobFile);
  Checkpoint c;
  try {
    if (manifest.at("format").get<std::string>() != kFormat) throw CheckpointError("not a mome checkpoint");
    if (manifest.at("version").get<int>() != kVersion) {
      throw CheckpointError("unsupported checkpoint version " + manifest.at("version").dump());
    }
    c.kind = kind_from_string(manifest.at("kind").get<std::string>());
    c.stage = manifest.at("stage").get<int>();
    c.seed = manifest.at("seed").get<std::uint64_t>();
    c.config_json = manifest.at("config").dump();
    c.meta = manifest.at("meta").get<std::map<std::string, std::string>>();
    std::size_t expected_offset = 0;
    for (const auto& e : manifest.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<ad::Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto nbytes = e.at("nbytes").get<std::size_t>();
      if (e.at("dtype").get<std::string>() != "f64") throw CheckpointError("tensor '" + name + "' is not f64");
      if (offset != expected_offset || nbytes != ad::shape_size(shape) * 8) {
        throw CheckpointError("tensor '" + name + "' has an inconsistent offset or size");
      }
      expected_offset += nbytes;
      if (offset + nbytes > blob.size()) {
        throw ChecksumError("checksum mismatch for tensor '" + name + "': blob truncated at " +
                                std::to_string(blob.size()) + " bytes",
                            name);
      }
      const std::string_view bytes(blob.data() + offset, nbytes);
      if (bytes_checksum(bytes) != e.at("checksum").get<std::string>()) {
        throw ChecksumError("checksum mismatch for tensor '" + name + "'", name);
      }
      std::vector<double> values(ad::shape_size(shape));
      const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
      for (std::size_t i = 0; i < values.size(); ++i) values[i] = read_le(p + 8 * i);
      c.tensors.push_back({name, Tensor::from(shape, std::move(values))});
    }
    if (expected_offset != blob.size()) {
      throw CheckpointError("blob holds " + std::to_string(blob.size()) + " bytes, manifest describes " +
                            std::to_string(expected_offset));
    }
  } catch (const json::exception& e) {
    throw CheckpointError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  return c;
}

std::string tensor_set_checksum(std::span<const NamedTensor> tensors) {
  Fnv1a64 h;
  for (const auto& t : tensors) {
    h.update(t.name);
    h.update(std::string_view("\0", 1));
    for (auto d : t.tensor.shape()) h.update(std::to_string(d) + ",");
    h.update(encode(t.tensor.data()));
  }
  return h.hex();
}

Checkpoint backbone_checkpoint(const backbone::Transformer& model, std::uint64_t seed, std::string config_json) {
  Checkpoint c;
  c.kind = CheckpointKind::backbone;
  c.stage = 0;
  c.seed = seed;
  c.config_json = std::move(config_json);
  c.meta["model"] = model_config_to_json(model.config());
  for (const auto& t : model.parameters()) c.tensors.push_back({t.name, t.tensor});
  return c;
}

backbone::Transformer backbone_from_checkpoint(const Checkpoint& checkpoint) {
  require_kind(checkpoint, CheckpointKind::backbone);
  const auto config = model_config_from_json(meta_at(checkpoint, "model"));
  auto model = backbone::Transformer::init(config, 0);
  const TensorIndex index(checkpoint);
  for (auto& p : model.parameters()) {
    const Tensor stored = index.at(p.name, p.tensor.shape());
    auto dst = p.tensor.mutable_data();
    const auto src = stored.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  if (checkpoint.tensors.size() != model.parameters().size()) {
    throw CheckpointError("backbone checkpoint holds unexpected tensors");
  }
  model.set_requires_grad(false);
  return model;
}

Checkpoint source_checkpoint(const training::SourceArtifact& source, const backbone::ModelConfig& model,
                             std::uint64_t seed, std::string config_json) {
  Checkpoint c;
  c.kind = CheckpointKind::source;
  c.stage = 1;
  c.seed = seed;
  c.config_json = std::move(config_json);
  c.meta["task_id"] = source.task_id;
  c.meta["description"] = source.description_text;
  c.meta["has_prompt"] = flag(source.prompt.has_value());
  c.meta["prompt_init"] = training::to_string(source.prompt_init);
  c.meta["expert_kind"] = source.experts.layers.empty() ? "lora" : experts::to_string(source.experts.layers[0].kind);
  c.meta["model"] = model_config_to_json(model);
  if (source.prompt) c.tensors.push_back({"prompt", source.prompt->matrix});
  for (std::size_t l = 0; l < source.experts.layers.size(); ++l) {
    c.tensors.push_back({"expert." + std::to_string(l) + ".w_down", source.experts.layers[l].w_down});
    c.tensors.push_back({"expert." + std::to_string(l) + ".w_up", source.experts.layers[l].w_up});
  }
  return c;
}

training::SourceArtifact source_from_checkpoint(const Checkpoint& checkpoint) {
  require_kind(checkpoint, CheckpointKind::source);
  const auto model = model_config_from_json(meta_at(checkpoint, "model"));
  const TensorIndex index(checkpoint);
  training::SourceArtifact art;
  art.task_id = meta_at(checkpoint, "task_id");
  art.description_text = meta_at(checkpoint, "description");
  art.prompt_init = training::prompt_init_from_string(meta_at(checkpoint, "prompt_init"));
  if (meta_flag(checkpoint, "has_prompt")) {
    const Tensor p = index.at("prompt");
    if (p.rank() != 2 || p.cols() != model.d_model) throw CheckpointError("source prompt has the wrong width");
    art.prompt = prompts::TaskPrompt{p, art.task_id};
  }
  const auto kind = experts::expert_kind_from_string(meta_at(checkpoint, "expert_kind"));
  art.experts.task_id = art.task_id;
  for (std::size_t l = 0; l < model.n_layers(); ++l) {
    experts::ExpertAdapter e;
    e.w_down = index.at("expert." + std::to_string(l) + ".w_down");
    e.w_up = index.at("expert." + std::to_string(l) + ".w_up");
    const std::size_t r = e.w_down.cols();
    if (e.w_down.shape() != ad::Shape{model.d_model, r} || e.w_up.shape() != ad::Shape{r, model.d_model}) {
      throw CheckpointError("expert " + std::to_string(l) + " has inconsistent shapes");
    }
    e.kind = kind;
    e.layer_index = l;
    e.task_id = art.task_id;
    art.experts.layers.push_back(std::move(e));
  }
  return art;
}

Checkpoint target_checkpoint(const training::TargetArtifact& target, std::span<const training::SourceArtifact> sources,
                             const backbone::ModelConfig& model, std::uint64_t seed, std::string config_json) {
  Checkpoint c;
  c.kind = CheckpointKind::target;
  c.stage = 2;
  c.seed = seed;
  c.config_json = std::move(config_json);
  c.meta["task_id"] = target.task_id;
  c.meta["description"] = target.description_text;
  c.meta["use_description"] = flag(target.flags.use_description);
  c.meta["use_correlation"] = flag(target.flags.use_correlation);
  c.meta["use_moe"] = flag(target.flags.use_moe);
  c.meta["adapter_residual"] = flag(target.adapter_residual);
  c.meta["scale_correlation_attention"] = flag(target.scale_correlation_attention);
  c.meta["has_prompt"] = flag(target.target_prompt.has_value());
  c.meta["model"] = model_config_to_json(model);
  std::string ids;
  for (const auto& id : target.source_task_ids) ids += (ids.empty() ? "" : ",") + id;
  c.meta["sources"] = ids;
  if (sources.size() != target.source_task_ids.size()) {
    throw CheckpointError("target references " + std::to_string(target.source_task_ids.size()) + " sources, got " +
                          std::to_string(sources.size()));
  }
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (sources[i].task_id != target.source_task_ids[i]) {
      throw CheckpointError("source " + std::to_string(i) + " is '" + sources[i].task_id + "', target expects '" +
                            target.source_task_ids[i] + "'");
    }
    const auto tensors = training::source_tensors(sources[i]);
    c.meta["source_checksum." + sources[i].task_id] = tensor_set_checksum(tensors);
  }
  if (target.target_prompt) c.tensors.push_back({"target.prompt", target.target_prompt->matrix});
  for (const auto& g : target.modules.gates) {
    c.tensors.push_back({"target.gate." + std::to_string(g.layer_index), g.w_gate});
  }
  for (const auto& a : target.modules.adapters) {
    c.tensors.push_back({"target.adapter." + std::to_string(a.layer_index) + ".w_down", a.w_down});
    c.tensors.push_back({"target.adapter." + std::to_string(a.layer_index) + ".w_up", a.w_up});
  }
  for (const auto& d : target.layer_norm_deltas) c.tensors.push_back({"ln_delta." + d.name, d.tensor});
  return c;
}

training::TargetArtifact target_from_checkpoint(const Checkpoint& checkpoint,
                                                std::span<const training::SourceArtifact> sources) {
  require_kind(checkpoint, CheckpointKind::target);
  const auto model = model_config_from_json(meta_at(checkpoint, "model"));
  const TensorIndex index(checkpoint);
  training::TargetArtifact art;
  art.task_id = meta_at(checkpoint, "task_id");
  art.description_text = meta_at(checkpoint, "description");
  art.flags = {meta_flag(checkpoint, "use_description"), meta_flag(checkpoint, "use_correlation"),
               meta_flag(checkpoint, "use_moe")};
  art.adapter_residual = meta_flag(checkpoint, "adapter_residual");
  art.scale_correlation_attention = meta_flag(checkpoint, "scale_correlation_attention");
  art.source_task_ids = split_ids(meta_at(checkpoint, "sources"));

  if (sources.size() != art.source_task_ids.size()) {
    throw CheckpointError("target was trained with " + std::to_string(art.source_task_ids.size()) +
                          " sources, " + std::to_string(sources.size()) + " supplied");
  }
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const auto& id = art.source_task_ids[i];
    if (sources[i].task_id != id) {
      throw CheckpointError("source " + std::to_string(i) + " is '" + sources[i].task_id + "', target expects '" +
                            id + "'");
    }
    const auto tensors = training::source_tensors(sources[i]);
    if (tensor_set_checksum(tensors) != meta_at(checkpoint, "source_checksum." + id)) {
      throw CheckpointError("source '" + id + "' differs from the one the target was trained with");
    }
  }

  if (meta_flag(checkpoint, "has_prompt")) {
    const Tensor p = index.at("target.prompt");
    if (p.rank() != 2 || p.cols() != model.d_model) throw CheckpointError("target prompt has the wrong width");
    art.target_prompt = prompts::TaskPrompt{p, art.task_id};
  }
  for (std::size_t l = 0; l < model.n_layers(); ++l) {
    if (art.flags.use_moe) {
      gating::GateLayer g;
      g.w_gate = index.at("target.gate." + std::to_string(l), {model.d_model, sources.size()});
      g.layer_index = l;
      g.block_kind = layer_kind(model, l);
      art.modules.gates.push_back(std::move(g));
    }
    experts::ExpertAdapter a;
    a.w_down = index.at("target.adapter." + std::to_string(l) + ".w_down");
    a.w_up = index.at("target.adapter." + std::to_string(l) + ".w_up");
    const std::size_t r = a.w_down.cols();
    if (a.w_down.shape() != ad::Shape{model.d_model, r} || a.w_up.shape() != ad::Shape{r, model.d_model}) {
      throw CheckpointError("target adapter " + std::to_string(l) + " has inconsistent shapes");
    }
    a.kind = experts::ExpertKind::adapter;
    a.layer_index = l;
    a.task_id = art.task_id;
    art.modules.adapters.push_back(std::move(a));
  }
  for (const auto& t : checkpoint.tensors) {
    if (t.name.starts_with("ln_delta.")) {
      art.layer_norm_deltas.push_back({t.name.substr(9), t.tensor.clone()});
    }
  }
  return art;
}

}  // namespace mome::cli
