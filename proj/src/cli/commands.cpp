// SPDX-License-Identifier: Apache-2.0

#include "mome/cli/commands.hpp"

#include <fstream>
#include <functional>

#include "mome/cli/checkpoint.hpp"
#include "mome/cli/csv.hpp"
#include "mome/cli/experiments.hpp"

namespace mome::cli {

namespace fs = std::filesystem;

namespace {

class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Context {
  const ExperimentConfig& config;
  OutputLayout layout;
  std::ostream& out;
  std::string config_json;
};

training::PromptInit configured_source_init(const training::AblationFlags& flags) {
  if (!flags.use_correlation) return training::PromptInit::none;
  return flags.use_description ? training::PromptInit::description : training::PromptInit::random_tokens;
}

bool configured_uses_sources(const training::AblationFlags& flags) { return flags.use_moe || flags.use_correlation; }

void write_resolved_config(const Context& ctx) {
  fs::create_directories(ctx.layout.root);
  std::ofstream f(ctx.layout.root / "config.resolved.json", std::ios::trunc);
  f << ctx.config_json;
}

backbone::Transformer load_backbone(const Context& ctx) {
  if (!fs::exists(ctx.layout.backbone() / kManifestFile)) {
    throw CommandError("no backbone checkpoint at " + ctx.layout.backbone().string() + "; run train-source first");
  }
  auto model = backbone_from_checkpoint(load_checkpoint(ctx.layout.backbone()));
  if (!(model.config() == ctx.config.model)) {
    throw CommandError("backbone checkpoint at " + ctx.layout.backbone().string() +
                       " was built for a different model config");
  }
  return model;
}

backbone::Transformer ensure_backbone(const Context& ctx) {
  if (fs::exists(ctx.layout.backbone() / kManifestFile)) return load_backbone(ctx);
  ctx.out << "pretraining backbone (" << ctx.config.pretrain.steps << " steps)\n";
  auto pre = training::pretrain_backbone(ctx.config.model, ctx.config.pretrain);
  save_checkpoint(backbone_checkpoint(pre.model, ctx.config.pretrain.seed, ctx.config_json), ctx.layout.backbone());
  write_metrics_csv(ctx.layout.backbone() / "metrics.csv", pre.metrics);
  return std::move(pre.model);
}

std::vector<training::SourceArtifact> load_sources(const Context& ctx) {
  std::vector<training::SourceArtifact> out;
  std::vector<std::string> missing;
  for (const auto& t : ctx.config.sources) {
    if (!fs::exists(ctx.layout.source(t.task_id) / kManifestFile)) {
      missing.push_back(t.task_id);
      continue;
    }
    out.push_back(source_from_checkpoint(load_checkpoint(ctx.layout.source(t.task_id))));
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw CommandError("missing source checkpoints under " + ctx.layout.sources().string() + ": " + list +
                       "; run train-source first");
  }
  return out;
}

// Loaded sources seed the cache when every one matches the wanted variant.
void seed_cache(const Context& ctx, SourceCache& cache) {
  std::vector<training::SourceArtifact> loaded;
  for (const auto& t : ctx.config.sources) {
    if (!fs::exists(ctx.layout.source(t.task_id) / kManifestFile)) return;
    loaded.push_back(source_from_checkpoint(load_checkpoint(ctx.layout.source(t.task_id))));
  }
  if (loaded.empty()) return;
  const auto init = loaded.front().prompt_init;
  for (const auto& s : loaded) {
    if (s.prompt_init != init) return;
  }
  cache.put(init, std::move(loaded));
}

tasks::Dataset test_set(const Context& ctx) {
  return tasks::gen_examples(ctx.config.target, ctx.config.eval_examples, tasks::Split::test);
}

int cmd_train_source(const Context& ctx) {
  const auto model = ensure_backbone(ctx);
  const auto init = configured_source_init(ctx.config.flags);
  for (const auto& t : ctx.config.sources) {
    auto r = training::train_stage1(model, t, ctx.config.stage1, init);
    save_checkpoint(source_checkpoint(r.artifact, ctx.config.model, ctx.config.stage1.seed, ctx.config_json),
                    ctx.layout.source(t.task_id));
    write_metrics_csv(ctx.layout.source(t.task_id) / "metrics.csv", r.metrics);
    const auto ev = training::evaluate_source(model, r.artifact,
                                              tasks::gen_examples(t, ctx.config.eval_examples, tasks::Split::dev));
    ctx.out << "source " << t.task_id << ": dev exact_match " << format_real(ev.exact_match) << ", token_accuracy "
            << format_real(ev.token_accuracy) << '\n';
  }
  return 0;
}

int cmd_train_target(const Context& ctx) {
  const auto model = load_backbone(ctx);
  std::vector<training::SourceArtifact> sources;
  if (configured_uses_sources(ctx.config.flags)) {
    sources = load_sources(ctx);
    const auto want = configured_source_init(ctx.config.flags);
    for (const auto& s : sources) {
      if (ctx.config.flags.use_correlation && s.prompt_init != want) {
        throw CommandError("source '" + s.task_id + "' has a " + training::to_string(s.prompt_init) +
                           " prompt but the ablation flags need " + training::to_string(want) +
                           "; rerun train-source with the same flags");
      }
    }
  }
  training::Stage2Options opts;
  opts.flags = ctx.config.flags;
  if (ctx.config.few_shot_k) {
    opts.train_override =
        few_shot_training_set(ctx.config.target, ctx.config.few_shot, *ctx.config.few_shot_k, ctx.config.stage2.seed);
  }
  auto r = training::train_stage2(model, ctx.config.target, sources, ctx.config.stage2, opts);
  save_checkpoint(target_checkpoint(r.artifact, sources, ctx.config.model, ctx.config.stage2.seed, ctx.config_json),
                  ctx.layout.target());
  write_metrics_csv(ctx.layout.target() / "metrics.csv", r.metrics);
  write_gates_csv(ctx.layout.target() / "gates.csv", r.gate_trace);
  training::TargetModel tm(model, sources, r.artifact);
  const auto ev = tm.evaluate(test_set(ctx));
  ctx.out << "target " << ctx.config.target.task_id << ": test exact_match " << format_real(ev.exact_match)
          << ", token_accuracy " << format_real(ev.token_accuracy) << '\n';
  return 0;
}

training::TargetModel load_target_model(const Context& ctx, const backbone::Transformer& model) {
  if (!fs::exists(ctx.layout.target() / kManifestFile)) {
    throw CommandError("no target checkpoint at " + ctx.layout.target().string() + "; run train-target first");
  }
  const Checkpoint c = load_checkpoint(ctx.layout.target());
  const bool needs_sources = c.meta.contains("sources") && !c.meta.at("sources").empty();
  std::vector<training::SourceArtifact> sources;
  if (needs_sources) sources = load_sources(ctx);
  auto art = target_from_checkpoint(c, sources);
  return training::TargetModel(model, std::move(sources), std::move(art));
}

int cmd_evaluate(const Context& ctx) {
  const auto model = load_backbone(ctx);
  std::vector<EvalRow> rows;
  for (const auto& t : ctx.config.sources) {
    if (!fs::exists(ctx.layout.source(t.task_id) / kManifestFile)) continue;
    const auto s = source_from_checkpoint(load_checkpoint(ctx.layout.source(t.task_id)));
    const auto ev = training::evaluate_source(model, s, tasks::gen_examples(t, ctx.config.eval_examples,
                                                                           tasks::Split::test));
    rows.push_back({t.task_id, "test", ev.exact_match, ev.token_accuracy});
  }
  if (fs::exists(ctx.layout.target() / kManifestFile)) {
    const auto tm = load_target_model(ctx, model);
    const auto ev = tm.evaluate(test_set(ctx));
    rows.push_back({ctx.config.target.task_id, "test", ev.exact_match, ev.token_accuracy});
  }
  if (rows.empty()) throw CommandError("nothing to evaluate under " + ctx.layout.root.string());
  write_eval_csv(ctx.layout.root / "evaluation.csv", rows);
  for (const auto& r : rows) {
    ctx.out << r.task << ": exact_match " << format_real(r.exact_match) << ", token_accuracy "
            << format_real(r.token_accuracy) << '\n';
  }
  return 0;
}

int cmd_ablate(const Context& ctx) {
  const auto model = ensure_backbone(ctx);
  SourceCache cache(model, ctx.config.sources, ctx.config.stage1, &ctx.out);
  seed_cache(ctx, cache);
  const auto rows = run_ablation(model, cache, ctx.config.target, ctx.config.stage2, ctx.config.seeds,
                                 test_set(ctx), &ctx.out);
  write_ablation_csv(ctx.layout.root / "ablation.csv", rows);
  ctx.out << "arm,mean_exact_match\n";
  for (const auto& [arm, mean] : arm_means(rows)) ctx.out << arm << ',' << format_real(mean) << '\n';
  return 0;
}

int cmd_fewshot(const Context& ctx) {
  const auto model = ensure_backbone(ctx);
  SourceCache cache(model, ctx.config.sources, ctx.config.stage1, &ctx.out);
  seed_cache(ctx, cache);
  const auto rows = run_fewshot(model, cache, ctx.config.target, ctx.config.stage2, ctx.config.few_shot,
                                ctx.config.seeds, test_set(ctx), &ctx.out);
  write_fewshot_csv(ctx.layout.root / "fewshot.csv", rows);
  return 0;
}

int cmd_export_gates(const Context& ctx) {
  const auto model = load_backbone(ctx);
  const auto tm = load_target_model(ctx, model);
  if (!tm.artifact().flags.use_moe) throw CommandError("the target was trained without gates");
  const auto g = export_gates(tm, tasks::gen_examples(ctx.config.target, ctx.config.eval_examples, tasks::Split::dev));
  write_gate_summary_csv(ctx.layout.root / "gate_summary.csv", g.summary);
  write_gate_layers_csv(ctx.layout.root / "gate_layers.csv", g.layers);
  for (const auto& r : g.summary) ctx.out << r.task << ' ' << r.expert << ' ' << format_real(r.weight) << '\n';
  return 0;
}

using Handler = std::function<int(const Context&)>;

const std::vector<std::pair<std::string, Handler>>& handlers() {
  static const std::vector<std::pair<std::string, Handler>> table = {
      {"train-source", cmd_train_source}, {"train-target", cmd_train_target}, {"evaluate", cmd_evaluate},
      {"ablate", cmd_ablate},             {"fewshot", cmd_fewshot},           {"export-gates", cmd_export_gates}};
  return table;
}

}  // namespace

std::vector<std::string> command_names() {
  std::vector<std::string> out;
  for (const auto& [name, fn] : handlers()) out.push_back(name);
  return out;
}

int run_command(const std::string& command, const ExperimentConfig& config, std::ostream& out, std::ostream& err) {
  const Handler* handler = nullptr;
  for (const auto& [name, fn] : handlers()) {
    if (name == command) handler = &fn;
  }
  if (!handler) {
    err << "unknown command '" << command << "'\n";
    return 2;
  }
  ExperimentConfig resolved = config;
  resolved.output_dir = resolve_output_dir(config);
  Context ctx{config, OutputLayout{resolved.output_dir}, out, experiment_config_to_json(resolved)};
  try {
    write_resolved_config(ctx);
    return (*handler)(ctx);
  } catch (const ConfigError& e) {
    err << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << command << ": " << e.what() << '\n';
    return 1;
  }
}

int run_command(const std::string& command, const fs::path& config_path, std::ostream& out, std::ostream& err) {
  ExperimentConfig config;
  try {
    config = load_experiment_config(config_path);
  } catch (const ConfigError& e) {
    err << e.what() << '\n';
    return 2;
  }
  return run_command(command, config, out, err);
}

}  // namespace mome::cli
