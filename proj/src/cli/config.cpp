// SPDX-License-Identifier: Apache-2.0

#include "mome/cli/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace mome::cli {

using nlohmann::json;

namespace {

std::string join_path(const std::string& base, const std::string& key) { return base.empty() ? key : base + "." + key; }

class Reader {
 public:
  explicit Reader(std::vector<std::string>& issues) : issues_(issues) {}

  void fail(const std::string& path, const std::string& message) { issues_.push_back(path + ": " + message); }

  bool object(const json& j, const std::string& path, const std::set<std::string>& allowed) {
    if (!j.is_object()) {
      fail(path.empty() ? "<root>" : path, "expected an object");
      return false;
    }
    for (const auto& [key, value] : j.items()) {
      if (!allowed.contains(key)) fail(join_path(path, key), "unknown key");
    }
    return true;
  }

  void get(const json& obj, const std::string& path, const char* key, double& out) {
    const json* v = find(obj, key);
    if (!v) return;
    if (!v->is_number()) return fail(join_path(path, key), "expected a number");
    out = v->get<double>();
  }

  void get(const json& obj, const std::string& path, const char* key, std::size_t& out) {
    const json* v = find(obj, key);
    if (!v) return;
    if (!is_unsigned(*v)) return fail(join_path(path, key), "expected a non-negative integer");
    out = v->get<std::size_t>();
  }

  void get_u64(const json& obj, const std::string& path, const char* key, std::uint64_t& out) {
    const json* v = find(obj, key);
    if (!v) return;
    if (!is_unsigned(*v)) return fail(join_path(path, key), "expected a non-negative integer");
    out = v->get<std::uint64_t>();
  }

  void get(const json& obj, const std::string& path, const char* key, int& out) {
    const json* v = find(obj, key);
    if (!v) return;
    if (!v->is_number_integer()) return fail(join_path(path, key), "expected an integer");
    out = v->get<int>();
  }

  void get(const json& obj, const std::string& path, const char* key, bool& out) {
    const json* v = find(obj, key);
    if (!v) return;
    if (!v->is_boolean()) return fail(join_path(path, key), "expected true or false");
    out = v->get<bool>();
  }

  void get(const json& obj, const std::string& path, const char* key, std::string& out) {
    const json* v = find(obj, key);
    if (!v) return;
    if (!v->is_string()) return fail(join_path(path, key), "expected a string");
    out = v->get<std::string>();
  }

  void get(const json& obj, const std::string& path, const char* key, std::vector<int>& out) {
    const json* v = find(obj, key);
    if (!v) return;
    if (!v->is_array() || !std::all_of(v->begin(), v->end(), [](const json& e) { return e.is_number_integer(); })) {
      return fail(join_path(path, key), "expected an array of integers");
    }
    out = v->get<std::vector<int>>();
  }

  static bool is_unsigned(const json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  }

 private:
  static const json* find(const json& obj, const char* key) {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
  }

  std::vector<std::string>& issues_;
};

const std::set<std::string> kTrainKeys = {
    "stage",        "learning_rate", "batch_size", "warmup_steps", "steps", "train_examples",
    "alpha",        "balance_sign",  "seed",       "expert_rank",  "kind",  "adapter_rank",
    "adapter_residual", "scale_correlation_attention", "beta1", "beta2", "adam_eps", "weight_decay"};

const std::set<std::string> kModelKeys = {"d_model", "n_layers_enc", "n_layers_dec", "n_heads",
                                          "d_ff",    "vocab_size",   "max_len",      "ln_eps"};

void read_train(Reader& r, const json& j, const std::string& path, training::TrainConfig& cfg) {
  if (!r.object(j, path, kTrainKeys)) return;
  const int expected_stage = cfg.stage;
  r.get(j, path, "stage", cfg.stage);
  if (cfg.stage != expected_stage) {
    r.fail(join_path(path, "stage"), "must be " + std::to_string(expected_stage) + " in this section");
    cfg.stage = expected_stage;
  }
  r.get(j, path, "learning_rate", cfg.learning_rate);
  r.get(j, path, "batch_size", cfg.batch_size);
  r.get(j, path, "warmup_steps", cfg.warmup_steps);
  r.get(j, path, "steps", cfg.steps);
  r.get(j, path, "train_examples", cfg.train_examples);
  r.get(j, path, "alpha", cfg.alpha);
  r.get(j, path, "balance_sign", cfg.balance_sign);
  r.get_u64(j, path, "seed", cfg.seed);
  r.get(j, path, "expert_rank", cfg.expert_rank);
  std::string kind = experts::to_string(cfg.kind);
  r.get(j, path, "kind", kind);
  try {
    cfg.kind = experts::expert_kind_from_string(kind);
  } catch (const std::exception&) {
    r.fail(join_path(path, "kind"), "expected \"lora\" or \"adapter\"");
  }
  r.get(j, path, "adapter_rank", cfg.adapter_rank);
  r.get(j, path, "adapter_residual", cfg.adapter_residual);
  r.get(j, path, "scale_correlation_attention", cfg.scale_correlation_attention);
  r.get(j, path, "beta1", cfg.beta1);
  r.get(j, path, "beta2", cfg.beta2);
  r.get(j, path, "adam_eps", cfg.adam_eps);
  r.get(j, path, "weight_decay", cfg.weight_decay);
}

void check_train(Reader& r, const std::string& path, const training::TrainConfig& cfg) {
  try {
    cfg.validate();
  } catch (const std::exception& e) {
    r.fail(path, e.what());
  }
}

void read_model(Reader& r, const json& j, const std::string& path, backbone::ModelConfig& m) {
  if (!r.object(j, path, kModelKeys)) return;
  r.get(j, path, "d_model", m.d_model);
  r.get(j, path, "n_layers_enc", m.n_layers_enc);
  r.get(j, path, "n_layers_dec", m.n_layers_dec);
  r.get(j, path, "n_heads", m.n_heads);
  r.get(j, path, "d_ff", m.d_ff);
  r.get(j, path, "vocab_size", m.vocab_size);
  r.get(j, path, "max_len", m.max_len);
  r.get(j, path, "ln_eps", m.ln_eps);
}

const tasks::SyntheticTask* find_task(const std::vector<tasks::SyntheticTask>& list, const std::string& id) {
  auto it = std::find_if(list.begin(), list.end(), [&](const auto& t) { return t.task_id == id; });
  return it == list.end() ? nullptr : &*it;
}

std::optional<tasks::SyntheticTask> read_task(Reader& r, const json& j, const std::string& path,
                                              const std::vector<tasks::SyntheticTask>& sources) {
  if (!j.is_object()) {
    r.fail(path, "expected a task object");
    return std::nullopt;
  }
  const auto defaults = tasks::default_source_tasks();
  if (j.contains("preset")) {
    if (!r.object(j, path, {"preset"})) return std::nullopt;
    std::string name;
    r.get(j, path, "preset", name);
    const auto* t = find_task(defaults, name);
    if (!t) {
      r.fail(join_path(path, "preset"), "no default task named '" + name + "'");
      return std::nullopt;
    }
    return *t;
  }
  if (j.contains("identical_to")) {
    if (!r.object(j, path, {"identical_to", "task_id"})) return std::nullopt;
    std::string ref, id;
    r.get(j, path, "identical_to", ref);
    r.get(j, path, "task_id", id);
    const auto* t = find_task(sources, ref);
    if (!t) {
      r.fail(join_path(path, "identical_to"), "no source task named '" + ref + "'");
      return std::nullopt;
    }
    if (id.empty()) id = ref + "_target";
    return tasks::identical_target(*t, id);
  }
  if (j.contains("related_to")) {
    if (!r.object(j, path, {"related_to", "shared_prefix", "task_id", "description"})) return std::nullopt;
    std::string ref, id, description;
    std::size_t shared = 0;
    r.get(j, path, "related_to", ref);
    r.get(j, path, "shared_prefix", shared);
    r.get(j, path, "task_id", id);
    r.get(j, path, "description", description);
    const auto* t = find_task(sources, ref);
    if (!t) {
      r.fail(join_path(path, "related_to"), "no source task named '" + ref + "'");
      return std::nullopt;
    }
    if (id.empty()) id = ref + "_related";
    if (description.empty()) description = t->description.text;
    try {
      return tasks::related_token_map(*t, shared, id, description);
    } catch (const std::exception& e) {
      r.fail(path, e.what());
      return std::nullopt;
    }
  }
  if (!r.object(j, path,
                {"task_id", "family", "vocab_subset", "description", "seed", "permutation", "modulus", "addend",
                 "min_len", "max_len"})) {
    return std::nullopt;
  }
  tasks::SyntheticTask t;
  std::string family = "copy";
  r.get(j, path, "task_id", t.task_id);
  r.get(j, path, "family", family);
  r.get(j, path, "vocab_subset", t.vocab_subset);
  r.get(j, path, "description", t.description.text);
  r.get_u64(j, path, "seed", t.seed);
  r.get(j, path, "permutation", t.params.permutation);
  r.get(j, path, "modulus", t.params.modulus);
  r.get(j, path, "addend", t.params.addend);
  r.get(j, path, "min_len", t.params.min_len);
  r.get(j, path, "max_len", t.params.max_len);
  t.description.task_id = t.task_id;
  try {
    t.family = tasks::family_from_string(family);
  } catch (const std::exception&) {
    r.fail(join_path(path, "family"), "unknown family '" + family + "'");
    return std::nullopt;
  }
  try {
    tasks::validate_task(t);
  } catch (const std::exception& e) {
    r.fail(path, e.what());
    return std::nullopt;
  }
  return t;
}

json task_to_json(const tasks::SyntheticTask& t) {
  json j;
  j["task_id"] = t.task_id;
  j["family"] = tasks::to_string(t.family);
  j["vocab_subset"] = t.vocab_subset;
  j["description"] = t.description.text;
  j["seed"] = t.seed;
  if (t.family == tasks::Family::token_map) j["permutation"] = t.params.permutation;
  if (t.family == tasks::Family::modular_add) {
    j["modulus"] = t.params.modulus;
    j["addend"] = t.params.addend;
  }
  j["min_len"] = t.params.min_len;
  j["max_len"] = t.params.max_len;
  return j;
}

json train_to_json(const training::TrainConfig& c) {
  return {{"stage", c.stage},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"warmup_steps", c.warmup_steps},
          {"steps", c.steps},
          {"train_examples", c.train_examples},
          {"alpha", c.alpha},
          {"balance_sign", c.balance_sign},
          {"seed", c.seed},
          {"expert_rank", c.expert_rank},
          {"kind", experts::to_string(c.kind)},
          {"adapter_rank", c.adapter_rank},
          {"adapter_residual", c.adapter_residual},
          {"scale_correlation_attention", c.scale_correlation_attention},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"weight_decay", c.weight_decay}};
}

json model_to_json(const backbone::ModelConfig& m) {
  return {{"d_model", m.d_model}, {"n_layers_enc", m.n_layers_enc}, {"n_layers_dec", m.n_layers_dec},
          {"n_heads", m.n_heads}, {"d_ff", m.d_ff},                 {"vocab_size", m.vocab_size},
          {"max_len", m.max_len}, {"ln_eps", m.ln_eps}};
}

json parse_or_throw(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError({std::string("<document>: ") + e.what()});
  }
}

}  // namespace

std::string to_string(AblationArm arm) {
  switch (arm) {
    case AblationArm::full: return "full";
    case AblationArm::no_description: return "no_description";
    case AblationArm::no_correlation: return "no_correlation";
    case AblationArm::no_correlation_no_moe: return "no_correlation_no_moe";
  }
  throw std::logic_error("unknown ablation arm");
}

AblationArm ablation_arm_from_string(const std::string& name) {
  for (auto arm : all_arms()) {
    if (to_string(arm) == name) return arm;
  }
  throw std::invalid_argument("unknown ablation arm '" + name + "'");
}

std::vector<AblationArm> all_arms() {
  return {AblationArm::full, AblationArm::no_description, AblationArm::no_correlation,
          AblationArm::no_correlation_no_moe};
}

training::AblationFlags arm_flags(AblationArm arm) {
  switch (arm) {
    case AblationArm::full: return {true, true, true};
    case AblationArm::no_description: return {false, true, true};
    case AblationArm::no_correlation: return {true, false, true};
    case AblationArm::no_correlation_no_moe: return {true, false, false};
  }
  throw std::logic_error("unknown ablation arm");
}

training::PromptInit arm_source_init(AblationArm arm) {
  switch (arm) {
    case AblationArm::full: return training::PromptInit::description;
    case AblationArm::no_description: return training::PromptInit::random_tokens;
    case AblationArm::no_correlation: return training::PromptInit::none;
    case AblationArm::no_correlation_no_moe: return training::PromptInit::none;
  }
  throw std::logic_error("unknown ablation arm");
}

bool arm_uses_sources(AblationArm arm) { return arm != AblationArm::no_correlation_no_moe; }

ConfigError::ConfigError(std::vector<std::string> issues)
    : std::runtime_error([&] {
        std::string msg = "invalid config (" + std::to_string(issues.size()) + " issue" +
                          (issues.size() == 1 ? "" : "s") + "):";
        for (const auto& i : issues) msg += "\n  " + i;
        return msg;
      }()),
      issues_(std::move(issues)) {}

ExperimentConfig default_experiment_config() {
  ExperimentConfig cfg;
  cfg.target = tasks::related_token_map(cfg.sources.at(2), 6, "map_c", "substitute each symbol, table c.");
  return cfg;
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  const json root = parse_or_throw(json_text);
  std::vector<std::string> issues;
  Reader r(issues);
  ExperimentConfig cfg = default_experiment_config();
  if (!r.object(root, "", {"model", "pretrain", "stage1", "stage2", "sources", "target", "ablation", "few_shot_k",
                           "few_shot", "seeds", "eval_examples", "output_dir"})) {
    throw ConfigError(std::move(issues));
  }
  if (root.contains("model")) read_model(r, root["model"], "model", cfg.model);
  try {
    cfg.model.validate();
  } catch (const std::exception& e) {
    r.fail("model", e.what());
  }
  if (root.contains("pretrain")) read_train(r, root["pretrain"], "pretrain", cfg.pretrain);
  if (root.contains("stage1")) read_train(r, root["stage1"], "stage1", cfg.stage1);
  if (root.contains("stage2")) read_train(r, root["stage2"], "stage2", cfg.stage2);
  check_train(r, "pretrain", cfg.pretrain);
  check_train(r, "stage1", cfg.stage1);
  check_train(r, "stage2", cfg.stage2);

  if (root.contains("sources")) {
    const json& s = root["sources"];
    if (s.is_string()) {
      if (s.get<std::string>() != "default") r.fail("sources", "expected \"default\" or an array of tasks");
    } else if (s.is_array()) {
      cfg.sources.clear();
      std::set<std::string> ids;
      for (std::size_t i = 0; i < s.size(); ++i) {
        const std::string path = "sources[" + std::to_string(i) + "]";
        auto t = read_task(r, s[i], path, cfg.sources);
        if (!t) continue;
        if (!ids.insert(t->task_id).second) r.fail(path + ".task_id", "duplicate task id '" + t->task_id + "'");
        cfg.sources.push_back(std::move(*t));
      }
      if (s.empty()) r.fail("sources", "at least one source task is required");
    } else {
      r.fail("sources", "expected \"default\" or an array of tasks");
    }
  }
  if (root.contains("target")) {
    auto t = read_task(r, root["target"], "target", cfg.sources);
    if (t) cfg.target = std::move(*t);
  } else if (!find_task(cfg.sources, "map_a")) {
    r.fail("target", "required when the sources do not include map_a");
  }
  if (find_task(cfg.sources, cfg.target.task_id)) {
    r.fail("target.task_id", "'" + cfg.target.task_id + "' is also a source task id");
  }

  if (root.contains("ablation")) {
    const json& a = root["ablation"];
    if (r.object(a, "ablation", {"use_description", "use_correlation", "use_moe"})) {
      r.get(a, "ablation", "use_description", cfg.flags.use_description);
      r.get(a, "ablation", "use_correlation", cfg.flags.use_correlation);
      r.get(a, "ablation", "use_moe", cfg.flags.use_moe);
    }
    if (cfg.flags.use_correlation && !cfg.flags.use_moe) {
      r.fail("ablation.use_moe", "false requires use_correlation to be false as well");
    }
  }
  if (root.contains("few_shot_k")) {
    const json& k = root["few_shot_k"];
    if (k.is_null()) {
      cfg.few_shot_k.reset();
    } else if (Reader::is_unsigned(k) && k.get<std::size_t>() > 0) {
      cfg.few_shot_k = k.get<std::size_t>();
    } else {
      r.fail("few_shot_k", "expected null or a positive integer");
    }
  }
  if (root.contains("few_shot")) {
    const json& f = root["few_shot"];
    if (r.object(f, "few_shot", {"k", "steps", "pool", "arms"})) {
      if (f.contains("k")) {
        const json& ks = f["k"];
        if (!ks.is_array() || ks.empty() ||
            !std::all_of(ks.begin(), ks.end(), [](const json& e) { return Reader::is_unsigned(e) && e.get<std::size_t>() > 0; })) {
          r.fail("few_shot.k", "expected a non-empty array of positive integers");
        } else {
          cfg.few_shot.k = ks.get<std::vector<std::size_t>>();
        }
      }
      r.get(f, "few_shot", "steps", cfg.few_shot.steps);
      r.get(f, "few_shot", "pool", cfg.few_shot.pool);
      if (f.contains("arms")) {
        const json& arms = f["arms"];
        if (!arms.is_array() || arms.empty()) {
          r.fail("few_shot.arms", "expected a non-empty array of arm names");
        } else {
          cfg.few_shot.arms.clear();
          for (const auto& a : arms) {
            try {
              cfg.few_shot.arms.push_back(ablation_arm_from_string(a.is_string() ? a.get<std::string>() : ""));
            } catch (const std::exception&) {
              r.fail("few_shot.arms", "unknown arm " + a.dump());
            }
          }
        }
      }
    }
    if (cfg.few_shot.steps == 0) r.fail("few_shot.steps", "must be at least 1");
    for (auto k : cfg.few_shot.k) {
      if (k > cfg.few_shot.pool) r.fail("few_shot.k", "k=" + std::to_string(k) + " exceeds the pool size");
    }
  }
  if (cfg.few_shot_k && *cfg.few_shot_k > cfg.few_shot.pool) {
    r.fail("few_shot_k", "exceeds few_shot.pool");
  }
  if (root.contains("seeds")) {
    const json& s = root["seeds"];
    if (!s.is_array() || s.empty() || !std::all_of(s.begin(), s.end(), Reader::is_unsigned)) {
      r.fail("seeds", "expected a non-empty array of non-negative integers");
    } else {
      cfg.seeds = s.get<std::vector<std::uint64_t>>();
    }
  }
  r.get(root, "", "eval_examples", cfg.eval_examples);
  if (cfg.eval_examples == 0) r.fail("eval_examples", "must be at least 1");
  std::string out = cfg.output_dir.string();
  r.get(root, "", "output_dir", out);
  if (out.empty()) r.fail("output_dir", "must not be empty");
  cfg.output_dir = out;

  if (!issues.empty()) throw ConfigError(std::move(issues));
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({path.string() + ": cannot open config file"});
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_experiment_config(buffer.str());
}

std::string experiment_config_to_json(const ExperimentConfig& c) {
  json j;
  j["model"] = model_to_json(c.model);
  j["pretrain"] = train_to_json(c.pretrain);
  j["stage1"] = train_to_json(c.stage1);
  j["stage2"] = train_to_json(c.stage2);
  j["sources"] = json::array();
  for (const auto& t : c.sources) j["sources"].push_back(task_to_json(t));
  j["target"] = task_to_json(c.target);
  j["ablation"] = {{"use_description", c.flags.use_description},
                   {"use_correlation", c.flags.use_correlation},
                   {"use_moe", c.flags.use_moe}};
  j["few_shot_k"] = c.few_shot_k ? json(*c.few_shot_k) : json(nullptr);
  json arms = json::array();
  for (auto a : c.few_shot.arms) arms.push_back(to_string(a));
  j["few_shot"] = {{"k", c.few_shot.k}, {"steps", c.few_shot.steps}, {"pool", c.few_shot.pool}, {"arms", arms}};
  j["seeds"] = c.seeds;
  j["eval_examples"] = c.eval_examples;
  j["output_dir"] = c.output_dir.string();
  return j.dump(2) + "\n";
}

std::string train_config_to_json(const training::TrainConfig& cfg) { return train_to_json(cfg).dump(); }

std::string model_config_to_json(const backbone::ModelConfig& cfg) { return model_to_json(cfg).dump(); }

training::TrainConfig train_config_from_json(const std::string& json_text) {
  const json j = parse_or_throw(json_text);
  std::vector<std::string> issues;
  Reader r(issues);
  training::TrainConfig cfg;
  if (j.is_object() && j.contains("stage") && j["stage"].is_number_integer()) cfg.stage = j["stage"].get<int>();
  read_train(r, j, "train", cfg);
  check_train(r, "train", cfg);
  if (!issues.empty()) throw ConfigError(std::move(issues));
  return cfg;
}

backbone::ModelConfig model_config_from_json(const std::string& json_text) {
  const json j = parse_or_throw(json_text);
  std::vector<std::string> issues;
  Reader r(issues);
  backbone::ModelConfig cfg;
  read_model(r, j, "model", cfg);
  try {
    cfg.validate();
  } catch (const std::exception& e) {
    r.fail("model", e.what());
  }
  if (!issues.empty()) throw ConfigError(std::move(issues));
  return cfg;
}

std::filesystem::path resolve_output_dir(const ExperimentConfig& config) {
  const char* env = std::getenv("MOME_OUTPUT_DIR");
  if (env && *env) return std::filesystem::path(env);
  return config.output_dir;
}

}  // namespace mome::cli
