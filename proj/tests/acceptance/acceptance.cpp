// SPDX-License-Identifier: Apache-2.0
//
// Acceptance runner. Prints one [PASS]/[FAIL] line per criterion and exits
// nonzero if any criterion fails.
//
//   acceptance [out_dir [criterion...]]
//
// out_dir receives the CSV summaries (default: a fresh directory under the
// system temp dir). Listing criterion numbers runs only those.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <unistd.h>

#include "mome/autodiff/grad_check.hpp"
#include "mome/autodiff/ops.hpp"
#include "mome/cli/checkpoint.hpp"
#include "mome/cli/csv.hpp"
#include "mome/cli/experiments.hpp"
#include "mome/tasks/tokenizer.hpp"
#include "mome/training/losses.hpp"
#include "mome/training/pipeline.hpp"
#include "oracles.hpp"

namespace {

using namespace mome;
using ad::Tensor;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

std::ostream& log() { return std::cerr; }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;
std::set<int> selected;

void report(int id, const std::string& name, const Outcome& o) {
  std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << id << ". " << name << ": " << o.detail << std::endl;
  if (!o.pass) ++failures;
}

void run_criterion(int id, const std::string& name, const std::function<Outcome()>& fn) {
  if (!selected.empty() && !selected.contains(id)) return;
  try {
    report(id, name, fn());
  } catch (const std::exception& e) {
    report(id, name, {false, std::string("error: ") + e.what()});
  }
}

std::vector<Tensor> leaves(std::span<const backbone::NamedTensor> named) {
  std::vector<Tensor> out;
  for (const auto& n : named) {
    Tensor t = n.tensor;
    t.set_requires_grad(true);
    out.push_back(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shared state: the pretrained backbone and the six full-arm sources.

const std::vector<std::uint64_t> kSeeds = {42, 1024, 4096};

struct World {
  backbone::ModelConfig model_config;
  backbone::Transformer backbone;
  std::map<std::string, std::string> backbone_after_pretrain;
  std::vector<tasks::SyntheticTask> source_tasks = tasks::default_source_tasks();
  std::optional<cli::SourceCache> cache;
  double source_seconds = 0.0;
  tasks::SyntheticTask related;
  std::optional<cli::ArmRun> full_seed42;
  std::vector<double> dominance_weight;   // α = 0.1, per seed
  std::vector<double> dominance_entropy;  // α = 0.1, per seed
  double dominance_seconds = 0.0;

  const std::vector<training::SourceArtifact>& sources() { return cache->get(training::PromptInit::description); }
};

World& world() {
  static World* w = [] {
    auto* w = new World;
    const auto t0 = Clock::now();
    log() << "pretraining backbone\n";
    w->backbone = training::pretrain_backbone(w->model_config, training::pretrain_defaults()).model;
    w->backbone_after_pretrain = training::checksums(w->backbone.parameters());
    log() << "  done in " << fmt(seconds_since(t0)) << " s\n";
    w->cache.emplace(w->backbone, w->source_tasks, training::stage1_defaults(), &log());
    const auto t1 = Clock::now();
    w->sources();
    w->source_seconds = seconds_since(t1);
    log() << "  six sources trained in " << fmt(w->source_seconds) << " s\n";
    w->related = tasks::related_token_map(w->source_tasks.at(2), 6, "map_c", "substitute each symbol, table c.");
    return w;
  }();
  return *w;
}

tasks::Dataset test_set(const tasks::SyntheticTask& t) { return tasks::gen_examples(t, 200, tasks::Split::test); }

cli::ArmRun& full_seed42() {
  auto& w = world();
  if (!w.full_seed42) {
    auto cfg = training::stage2_defaults();
    cfg.seed = 42;
    w.full_seed42 = cli::run_arm(w.backbone, *w.cache, w.related, cli::AblationArm::full, cfg, test_set(w.related));
  }
  return *w.full_seed42;
}

// ---------------------------------------------------------------------------
// 1. Gradient fidelity

backbone::ModelConfig tiny_config() {
  backbone::ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 12;
  c.n_layers_enc = 1;
  c.n_layers_dec = 1;
  c.max_len = 64;
  return c;
}

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  std::vector<std::pair<std::string, double>> errors;
  const auto check = [&](const std::string& path, const std::function<Tensor()>& loss, std::vector<Tensor> params) {
    for (auto& p : params) p.set_requires_grad(true);
    errors.emplace_back(path, ad::grad_check(loss, params, 1e-5));
  };
  using oracle::random_tensor;

  {
    Tensor a = random_tensor({3, 4}, 1), b = random_tensor({4, 5}, 2), c = random_tensor({5}, 5);
    Tensor g = random_tensor({5}, 3), be = random_tensor({5}, 4);
    check("autodiff", [&] {
      const Tensor h = ad::relu(ad::layer_norm(ad::add_bias(ad::matmul(a, b), c), g, be));
      return ad::sum(ad::mul(ad::softmax_lastdim(h), ad::log_softmax_lastdim(ad::scale(h, 0.7))));
    }, {a, b, c, g, be});
  }

  const auto model = backbone::Transformer::init(tiny_config(), 7);
  tasks::Example ex;
  ex.input = {5, 6, 7, 8};
  ex.target = {8, 7, 6, 5};
  const auto batch = training::to_token_batch(ex);
  {
    const Tensor prompt = random_tensor({3, 8}, 5);
    check("backbone", [&] {
      return training::nll_loss(model.seq2seq_forward(batch, prompt, nullptr).logits, batch.target_ids);
    }, leaves(model.parameters()));
    model.set_requires_grad(false);
  }

  Rng rng(9);
  for (auto kind : {experts::ExpertKind::lora, experts::ExpertKind::adapter}) {
    auto e = experts::make_expert(8, 3, kind, 0, "e", rng);
    e.w_up = random_tensor({3, 8}, 10, 0.5);
    const Tensor h = random_tensor({4, 8}, 11), origin = random_tensor({4, 8}, 12);
    check("experts/" + experts::to_string(kind), [&] {
      return ad::sum(ad::mul(experts::expert_residual_forward(e, h, origin), origin));
    }, {e.w_down, e.w_up, h});
  }

  {
    prompts::PromptBank bank;
    for (std::uint64_t i = 0; i < 3; ++i) bank.source_prompts.push_back({random_tensor({3 + i, 8}, 20 + i, 1.0, false), "s"});
    bank.target_prompt = {random_tensor({4, 8}, 30), "t"};
    const Tensor w = random_tensor({4, 8}, 31, 1.0, false);
    check("prompts", [&] { return ad::sum(ad::mul(prompts::build_correlation_prompt(bank), w)); },
          {bank.target_prompt.matrix});
  }

  {
    std::vector<experts::ExpertAdapter> es;
    for (std::uint64_t i = 0; i < 3; ++i) {
      auto e = experts::make_expert(8, 2, experts::ExpertKind::lora, 0, "e", rng);
      e.w_up = random_tensor({2, 8}, 40 + i, 0.5, false);
      es.push_back(e);
    }
    auto gate = gating::make_gate(8, 3, 0, backbone::BlockKind::encoder);
    gate.w_gate = random_tensor({8, 3}, 50);
    auto adapter = experts::make_expert(8, 2, experts::ExpertKind::adapter, 0, "t", rng);
    adapter.w_up = random_tensor({2, 8}, 51, 0.5);
    const Tensor h = random_tensor({5, 8}, 52), origin = random_tensor({5, 8}, 53);
    const Tensor w = random_tensor({5, 8}, 54, 1.0, false);
    check("gating", [&] {
      const auto mix = gating::moe_forward(h, es, gate, ad::mean_pool_rows(ad::slice_rows(h, 0, 2)), origin);
      return ad::sum(ad::mul(gating::target_adapter_forward(adapter, mix.h_e), w));
    }, {gate.w_gate, adapter.w_down, adapter.w_up, h, origin});

    const Tensor head = random_tensor({8, 64}, 55, 1.0, false);
    const std::vector<int> targets = {3, 4, 5, 6, tasks::kEosId};
    check("losses", [&] {
      const auto mix = gating::moe_forward(h, es, gate, ad::mean_pool_rows(h), origin);
      const Tensor out = ad::add(h, mix.h_e);
      const std::vector<gating::MixtureOutput> mixes{mix};
      const std::vector<Tensor> outs{out};
      return training::total_loss(training::nll_loss(ad::matmul(out, head), targets),
                                  training::moe_balance_loss(mixes, outs), 0.1);
    }, {gate.w_gate, h});
  }

  // Stage 1 composite: prompt + experts through the frozen backbone.
  const auto task_list = tasks::default_source_tasks();
  auto s1 = training::stage1_defaults();
  s1.steps = 3;
  s1.batch_size = 2;
  s1.warmup_steps = 1;
  std::vector<training::SourceArtifact> sources;
  for (std::size_t i : {0u, 2u, 5u}) sources.push_back(training::train_stage1(model, task_list[i], s1).artifact);
  {
    auto& src = sources[1];
    training::SourcePlugins plugins(src.experts);
    const auto ex1 = tasks::gen_example(task_list[2], tasks::Split::train, 0);
    const auto b1 = training::to_token_batch(ex1);
    check("stage-1 composite", [&] {
      return training::nll_loss(model.seq2seq_forward(b1, src.prompt->matrix, &plugins).logits, b1.target_ids);
    }, leaves(training::trainable_set(src)));
    for (auto& t : training::source_tensors(src)) t.tensor.set_requires_grad(false);
  }

  // Stage 2 composite: correlation prompt, gates, experts, target adapters,
  // LayerNorm, NLL and the balance term.
  {
    auto s2 = training::stage2_defaults();
    s2.steps = 3;
    s2.batch_size = 2;
    s2.warmup_steps = 1;
    s2.learning_rate = 1e-2;
    const auto target = tasks::related_token_map(task_list[2], 6, "map_c", "substitute each symbol, table c.");
    const auto r = training::train_stage2(model, target, sources, s2);
    training::TargetModel tm(model, sources, r.artifact);
    auto plugins = tm.make_plugins();
    const auto ex2 = tasks::gen_example(target, tasks::Split::train, 1);
    const auto b2 = training::to_token_batch(ex2);
    const std::size_t n_layers = tiny_config().n_layers();
    check("stage-2 composite", [&] {
      const auto fr = tm.forward(ex2, plugins, tm.prompt());
      std::vector<gating::MixtureOutput> mixes;
      std::vector<Tensor> outs;
      for (std::size_t l = 0; l < n_layers; ++l) {
        mixes.push_back(*plugins.mixtures().at(l));
        outs.push_back(fr.acts.layers.at(l).layer_output);
      }
      return training::total_loss(training::nll_loss(fr.logits, b2.target_ids),
                                  training::moe_balance_loss(mixes, outs), 0.1);
    }, leaves(tm.trainables()));
  }

  const double elapsed = seconds_since(t0);
  double worst = 0.0;
  std::string worst_path;
  for (const auto& [path, err] : errors) {
    log() << "  grad_check " << path << ": " << err << '\n';
    if (err >= worst) {
      worst = err;
      worst_path = path;
    }
  }
  return {worst < 1e-4 && elapsed < 300.0,
          std::to_string(errors.size()) + " paths, max relative error " + fmt(worst, 3) + " (" + worst_path + "), " +
              fmt(elapsed, 3) + " s"};
}

// ---------------------------------------------------------------------------
// 2. Zero-init uniformity

Outcome zero_init_uniformity() {
  auto& w = world();
  const auto& all = w.sources();
  auto cfg = training::stage2_defaults();
  cfg.steps = 60;
  cfg.warmup_steps = 6;
  double worst_step0 = 0.0, worst_sum = 0.0;
  std::size_t recorded = 0;
  for (std::size_t n : {1u, 2u, 6u}) {
    const std::vector<training::SourceArtifact> used(all.begin(), all.begin() + static_cast<long>(n));
    const auto art = training::init_target_artifact(w.backbone, w.related, used, cfg, {});
    training::TargetModel tm(w.backbone, used, art);
    auto plugins = tm.make_plugins();
    const Tensor prompt = tm.prompt();
    for (const auto& ex : tasks::gen_examples(w.related, 16, tasks::Split::dev).pairs) {
      tm.forward(ex, plugins, prompt);
      for (const auto& mix : plugins.mixtures()) {
        const Tensor weights = mix->weights;
        for (double v : weights.data()) worst_step0 = std::max(worst_step0, std::abs(v - 1.0 / static_cast<double>(n)));
      }
    }
    const auto r = training::train_stage2(w.backbone, w.related, used, cfg);
    for (const auto& t : r.gate_trace) {
      double s = 0.0;
      for (double v : t.weights) s += v;
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      if (t.step == 1) {
        for (double v : t.weights) worst_step0 = std::max(worst_step0, std::abs(v - 1.0 / static_cast<double>(n)));
      }
      ++recorded;
    }
  }
  const double machine = std::numeric_limits<double>::epsilon();
  return {worst_step0 <= machine && worst_sum <= 1e-6 && recorded > 0,
          "step-0 max |w - 1/N| " + fmt(worst_step0, 3) + " for N in {1,2,6}; max |sum - 1| " + fmt(worst_sum, 3) +
              " over " + std::to_string(recorded) + " recorded layer-steps"};
}

// ---------------------------------------------------------------------------
// 3. Freeze audit

Outcome freeze_audit() {
  auto& w = world();
  const auto after_stage1 = training::checksums(w.backbone.parameters());
  std::map<std::string, std::string> sources_before;
  for (const auto& s : w.sources()) {
    const auto c = training::checksums(training::source_tensors(s));
    sources_before.insert(c.begin(), c.end());
  }
  const auto& run = full_seed42();
  const auto after_stage2 = training::checksums(w.backbone.parameters());
  std::map<std::string, std::string> sources_after;
  for (const auto& s : w.sources()) {
    const auto c = training::checksums(training::source_tensors(s));
    sources_after.insert(c.begin(), c.end());
  }
  std::set<std::string> ln;
  for (const auto& t : w.backbone.layer_norm_parameters()) ln.insert(t.name);
  std::size_t ln_changed = 0, other_changed = 0;
  for (const auto& [name, sum] : after_stage1) {
    const bool changed = run.result.backbone_checksums.at(name) != sum;
    if (ln.contains(name)) {
      ln_changed += changed;
    } else {
      other_changed += changed;
    }
  }
  const bool stage1_ok = after_stage1 == w.backbone_after_pretrain;
  const bool original_ok = after_stage2 == w.backbone_after_pretrain;
  const bool sources_ok = sources_before == sources_after;
  return {stage1_ok && original_ok && sources_ok && other_changed == 0 && ln_changed > 0,
          std::string("backbone after stage 1 ") + (stage1_ok ? "unchanged" : "CHANGED") + ", after stage 2 " +
              (original_ok ? "unchanged" : "CHANGED") + "; working copy: " + std::to_string(ln_changed) + "/" +
              std::to_string(ln.size()) + " LayerNorm tensors changed, " + std::to_string(other_changed) +
              " other tensors changed; " + std::to_string(sources_before.size()) + " source tensors " +
              (sources_ok ? "unchanged" : "CHANGED")};
}

// ---------------------------------------------------------------------------
// 4. LoRA merge oracle

Outcome merge_oracle() {
  auto& w = world();
  const auto& all = w.sources();
  double worst = 0.0;
  for (std::size_t n : {1u, 3u, 6u}) {
    for (std::size_t l = 0; l < w.model_config.n_layers(); ++l) {
      const auto& ffn = l < w.model_config.n_layers_enc ? w.backbone.encoder[l].ffn
                                                         : w.backbone.decoder[l - w.model_config.n_layers_enc].ffn;
      std::vector<experts::ExpertAdapter> es;
      for (std::size_t i = 0; i < n; ++i) es.push_back(all[i].experts.layers[l]);
      std::vector<double> logits;
      for (std::size_t i = 0; i < n; ++i) logits.push_back(0.3 * static_cast<double>(i) - 0.5);
      const auto weights = oracle::softmax(logits);
      const auto merged = experts::merge_lora(ffn, es, weights);
      for (std::uint64_t k = 0; k < 100; ++k) {
        const Tensor h = oracle::random_tensor({3, w.model_config.d_model}, 1000 * n + 10 * l + k, 1.0, false);
        std::vector<Tensor> terms{backbone::ffn_forward(ffn, h)};
        for (std::size_t i = 0; i < n; ++i) terms.push_back(ad::scale(experts::expert_forward(es[i], h), weights[i]));
        const Tensor unmerged = ad::add_n(terms);
        const Tensor folded = experts::merged_ffn_forward(merged, h);
        worst = std::max(worst, oracle::max_abs_diff(folded.data(), unmerged.data()));
      }
    }
  }
  return {worst < 1e-10, "max abs difference " + fmt(worst, 3) + " over 100 inputs x every layer for 1, 3, 6 experts"};
}

// ---------------------------------------------------------------------------
// 5/6. Dominance experiment: target identical to map_a.

struct DominanceRun {
  double weight_j = 0.0;
  double entropy = 0.0;
};

DominanceRun dominance_run(double alpha, std::uint64_t seed) {
  auto& w = world();
  const auto& sources = w.sources();
  const std::size_t j = 2;
  const auto target = tasks::identical_target(w.source_tasks.at(j), "map_a_twin");
  auto cfg = training::stage2_defaults();
  cfg.seed = seed;
  cfg.alpha = alpha;
  const auto r = training::train_stage2(w.backbone, target, sources, cfg);
  DominanceRun out;
  for (const auto& layer : r.final_gate_means) out.weight_j += layer.at(j);
  out.weight_j /= static_cast<double>(r.final_gate_means.size());
  training::TargetModel tm(w.backbone, sources, r.artifact);
  out.entropy = tm.gate_statistics(tasks::gen_examples(target, 64, tasks::Split::dev)).mean_entropy;
  log() << "  dominance alpha=" << alpha << " seed " << seed << ": mean weight of map_a " << out.weight_j
        << ", entropy " << out.entropy << '\n';
  return out;
}

Outcome expert_dominance() {
  auto& w = world();
  const auto t0 = Clock::now();
  double mean = 0.0;
  std::string per_seed;
  for (auto seed : kSeeds) {
    const auto r = dominance_run(0.1, seed);
    w.dominance_weight.push_back(r.weight_j);
    w.dominance_entropy.push_back(r.entropy);
    mean += r.weight_j / static_cast<double>(kSeeds.size());
    per_seed += (per_seed.empty() ? "" : ", ") + fmt(r.weight_j, 3);
  }
  w.dominance_seconds = w.source_seconds + seconds_since(t0);
  return {mean > 0.5 && w.dominance_seconds < 600.0,
          "mean gate weight of the identical source " + fmt(mean, 4) + " (per seed " + per_seed + "; 1/K = " +
              fmt(1.0 / 6.0, 3) + "), " + fmt(w.dominance_seconds, 4) + " s including source training"};
}

Outcome balance_direction() {
  auto& w = world();
  if (w.dominance_entropy.size() != kSeeds.size()) return {false, "dominance runs with alpha=0.1 are missing"};
  double with = 0.0, without = 0.0;
  for (std::size_t i = 0; i < kSeeds.size(); ++i) {
    with += w.dominance_entropy[i] / static_cast<double>(kSeeds.size());
    without += dominance_run(0.0, kSeeds[i]).entropy / static_cast<double>(kSeeds.size());
  }
  return {with < without, "mean gate entropy " + fmt(with, 6) + " with alpha=0.1 vs " + fmt(without, 6) +
                              " with alpha=0"};
}

// ---------------------------------------------------------------------------
// 7. Ablation matrix

Outcome ablation_matrix(const fs::path& out_dir) {
  auto& w = world();
  const auto test = test_set(w.related);
  std::vector<cli::AblationRow> rows;
  for (auto arm : cli::all_arms()) {
    for (auto seed : kSeeds) {
      cli::ArmRun run;
      if (arm == cli::AblationArm::full && seed == 42) {
        run = full_seed42();
      } else {
        auto cfg = training::stage2_defaults();
        cfg.seed = seed;
        run = cli::run_arm(w.backbone, *w.cache, w.related, arm, cfg, test);
      }
      log() << "  ablation " << cli::to_string(arm) << " seed " << seed << ": exact_match " << run.eval.exact_match
            << '\n';
      rows.push_back({cli::to_string(arm), seed, run.eval.exact_match, run.eval.token_accuracy, run.trainable_params});
    }
  }
  cli::write_ablation_csv(out_dir / "ablation.csv", rows);
  const auto means = cli::arm_means(rows);
  std::cout << "  arm,mean_exact_match\n";
  for (const auto& [arm, m] : means) std::cout << "  " << arm << ',' << cli::format_real(m) << '\n';
  double full = 0.0;
  bool ok = rows.size() == 12 && means.size() == 4;
  std::string detail;
  for (const auto& [arm, m] : means) {
    if (arm == "full") full = m;
    detail += (detail.empty() ? "" : ", ") + arm + " " + fmt(m, 3);
  }
  for (const auto& [arm, m] : means) ok = ok && full >= m - 0.02;
  return {ok, std::to_string(rows.size()) + " runs; mean exact match " + detail};
}

// ---------------------------------------------------------------------------
// 8. Few-shot protocol

Outcome few_shot(const fs::path& out_dir) {
  auto& w = world();
  cli::FewShotConfig fs_cfg;
  const auto rows = cli::run_fewshot(w.backbone, *w.cache, w.related, training::stage2_defaults(), fs_cfg, kSeeds,
                                     test_set(w.related), &log());
  cli::write_fewshot_csv(out_dir / "fewshot.csv", rows);
  bool ok = rows.size() == fs_cfg.k.size() * kSeeds.size() * fs_cfg.arms.size();
  std::map<std::pair<std::size_t, std::uint64_t>, std::set<std::string>> digests;
  for (const auto& r : rows) {
    digests[{r.k, r.seed}].insert(r.sample_digest);
    ok = ok && r.exact_match >= 0.0 && r.exact_match <= 1.0;
  }
  std::set<std::string> distinct;
  for (const auto& [key, ds] : digests) {
    ok = ok && ds.size() == 1;
    const auto again = tasks::sample_digest(cli::few_shot_training_set(w.related, fs_cfg, key.first, key.second));
    const auto again2 = tasks::sample_digest(cli::few_shot_training_set(w.related, fs_cfg, key.first, key.second));
    ok = ok && again == again2 && ds.contains(again);
    distinct.insert(*ds.begin());
  }
  ok = ok && distinct.size() == digests.size();
  std::string means;
  for (auto k : fs_cfg.k) {
    double m = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows) {
      if (r.k == k && r.arm == "full") {
        m += r.exact_match;
        ++n;
      }
    }
    means += (means.empty() ? "" : ", ") + ("k=" + std::to_string(k) + " " + fmt(n ? m / static_cast<double>(n) : 0, 3));
  }
  return {ok, std::to_string(rows.size()) + " runs, one sample digest per (k, seed) shared by all arms, " +
                  std::to_string(distinct.size()) + " distinct samples; full-arm exact match " + means};
}

// ---------------------------------------------------------------------------
// 9. End-to-end learning

Outcome end_to_end() {
  auto& w = world();
  const auto& copy = w.sources().at(0);
  const auto copy_eval = training::evaluate_source(w.backbone, copy, test_set(w.source_tasks.at(0)));
  const auto art = training::init_target_artifact(w.backbone, w.related, w.sources(), training::stage2_defaults(), {});
  const auto baseline = training::TargetModel(w.backbone, w.sources(), art).evaluate(test_set(w.related));
  const auto& trained = full_seed42().eval;
  const double gain = trained.exact_match - baseline.exact_match;
  return {copy_eval.exact_match >= 0.95 && gain >= 0.10,
          "copy source exact match " + fmt(copy_eval.exact_match, 3) + " after " +
              std::to_string(training::stage1_defaults().steps) + " steps; related target " +
              fmt(baseline.exact_match, 3) + " at step 0 -> " + fmt(trained.exact_match, 3) + " (+" +
              fmt(100.0 * gain, 3) + " points)"};
}

// ---------------------------------------------------------------------------
// 10. Determinism and persistence

Outcome determinism(const fs::path& out_dir) {
  auto& w = world();
  const auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
  };
  bool ok = true;
  std::vector<std::string> checked;
  const auto compare = [&](const fs::path& a, const fs::path& b, const std::string& what) {
    const bool same = fs::file_size(a) > 0 && slurp(a) == slurp(b);
    if (!same) log() << "  " << what << " differs\n";
    ok = ok && same;
    checked.push_back(what);
  };

  auto s1 = training::stage1_defaults();
  s1.steps = 100;
  auto s2 = training::stage2_defaults();
  s2.steps = 50;
  std::vector<training::Stage2Result> s2_runs;
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = out_dir / ("determinism_" + std::to_string(run));
    fs::create_directories(dir);
    const auto r1 = training::train_stage1(w.backbone, w.source_tasks.at(3), s1);
    cli::write_metrics_csv(dir / "stage1_metrics.csv", r1.metrics);
    s2_runs.push_back(training::train_stage2(w.backbone, w.related, w.sources(), s2));
    cli::write_metrics_csv(dir / "stage2_metrics.csv", s2_runs.back().metrics);
    cli::write_gates_csv(dir / "gates.csv", s2_runs.back().gate_trace);
  }
  for (const char* f : {"stage1_metrics.csv", "stage2_metrics.csv", "gates.csv"}) {
    compare(out_dir / "determinism_0" / f, out_dir / "determinism_1" / f, f);
  }

  const std::vector<std::pair<std::string, cli::Checkpoint>> ckpts = {
      {"backbone", cli::backbone_checkpoint(w.backbone, 42, "{}")},
      {"source", cli::source_checkpoint(w.sources().at(2), w.model_config, 42, "{}")},
      {"target", cli::target_checkpoint(s2_runs[0].artifact, w.sources(), w.model_config, 42, "{}")}};
  for (const auto& [name, c] : ckpts) {
    const fs::path a = out_dir / "checkpoints" / (name + "_a"), b = out_dir / "checkpoints" / (name + "_b");
    fs::remove_all(a);
    fs::remove_all(b);
    cli::save_checkpoint(c, a);
    cli::save_checkpoint(cli::load_checkpoint(a), b);
    compare(a / cli::kManifestFile, b / cli::kManifestFile, name + " manifest");
    compare(a / cli::kBlobFile, b / cli::kBlobFile, name + " blob");
  }
  std::string list;
  for (const auto& c : checked) list += (list.empty() ? "" : ", ") + c;
  return {ok, std::to_string(checked.size()) + " file pairs byte-identical (" + list + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path out_dir = argc > 1 ? fs::path(argv[1])
                                    : fs::temp_directory_path() / ("mome_acceptance_" + std::to_string(::getpid()));
  for (int i = 2; i < argc; ++i) selected.insert(std::stoi(argv[i]));
  fs::create_directories(out_dir);
  const auto t0 = Clock::now();
  log() << "writing summaries to " << out_dir << '\n';

  run_criterion(1, "gradient fidelity", gradient_fidelity);
  run_criterion(2, "zero-init gate uniformity", zero_init_uniformity);
  run_criterion(3, "freeze audit", freeze_audit);
  run_criterion(4, "LoRA merge oracle", merge_oracle);
  run_criterion(5, "expert dominance", expert_dominance);
  run_criterion(6, "balance-loss direction", balance_direction);
  run_criterion(7, "ablation matrix", [&] { return ablation_matrix(out_dir); });
  run_criterion(8, "few-shot protocol", [&] { return few_shot(out_dir); });
  run_criterion(9, "end-to-end learning", end_to_end);
  run_criterion(10, "determinism and persistence", [&] { return determinism(out_dir); });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << " in "
            << fmt(seconds_since(t0), 4) << " s" << std::endl;
  return failures == 0 ? 0 : 1;
}
