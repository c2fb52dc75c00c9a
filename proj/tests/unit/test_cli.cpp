// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

#include "mome/cli/checkpoint.hpp"
#include "mome/cli/commands.hpp"
#include "mome/cli/config.hpp"
#include "mome/cli/csv.hpp"
#include "mome/cli/experiments.hpp"
#include "oracles.hpp"

namespace {

using namespace mome;
using namespace mome::cli;
namespace fs = std::filesystem;
using ad::Tensor;

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mome_test_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---------------------------------------------------------------- config --

TEST(Config, EmptyDocumentGivesDefaults) {
  const auto cfg = parse_experiment_config("{}");
  EXPECT_EQ(cfg.model, backbone::ModelConfig{});
  EXPECT_EQ(cfg.stage2.alpha, 0.1);
  EXPECT_EQ(cfg.stage2.balance_sign, -1.0);
  EXPECT_EQ(cfg.stage1.stage, 1);
  EXPECT_EQ(cfg.stage2.stage, 2);
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{42, 1024, 4096}));
  EXPECT_EQ(cfg.sources.size(), 6u);
  EXPECT_EQ(cfg.target.task_id, "map_c");
  EXPECT_EQ(cfg.flags, training::AblationFlags{});
}

TEST(Config, ResolvedJsonRoundTrips) {
  const auto cfg = parse_experiment_config(slurp(fs::path(MOME_SOURCE_DIR) / "configs/smoke.json"));
  const std::string json = experiment_config_to_json(cfg);
  EXPECT_EQ(experiment_config_to_json(parse_experiment_config(json)), json);
  EXPECT_EQ(cfg.stage1.steps, 20u);
  EXPECT_EQ(cfg.sources.size(), 3u);
}

TEST(Config, ReportsEveryIssueWithItsKey) {
  try {
    parse_experiment_config(R"({"stage1": {"learning_rate": -1}, "seeds": [], "eval_examples": 0, "bogus": 1})");
    FAIL() << "accepted";
  } catch (const ConfigError&) {
  }
  try {
    parse_experiment_config(R"({"stage1": {"learning_rate": -1}, "seeds": [], "eval_examples": 0})");
    FAIL() << "accepted";
  } catch (const ConfigError& e) {
    ASSERT_EQ(e.issues().size(), 3u) << e.what();
    EXPECT_EQ(e.issues()[0].rfind("stage1", 0), 0u) << e.issues()[0];
    EXPECT_EQ(e.issues()[1].rfind("seeds", 0), 0u) << e.issues()[1];
    EXPECT_EQ(e.issues()[2].rfind("eval_examples", 0), 0u) << e.issues()[2];
  }
}

TEST(Config, RejectsInconsistentAblationAndMalformedJson) {
  EXPECT_THROW(parse_experiment_config(R"({"ablation": {"use_moe": false}})"), ConfigError);
  EXPECT_NO_THROW(parse_experiment_config(R"({"ablation": {"use_moe": false, "use_correlation": false}})"));
  EXPECT_THROW(parse_experiment_config("{"), ConfigError);
  EXPECT_THROW(parse_experiment_config(R"({"model": {"d_model": 10, "n_heads": 4}})"), ConfigError);
  EXPECT_THROW(parse_experiment_config(R"({"sources": [{"preset": "copy"}]})"), ConfigError);
  EXPECT_THROW(load_experiment_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, OutputDirectoryEnvironmentOverride) {
  ExperimentConfig cfg;
  cfg.output_dir = "runs/x";
  ::unsetenv("MOME_OUTPUT_DIR");
  EXPECT_EQ(resolve_output_dir(cfg), fs::path("runs/x"));
  ::setenv("MOME_OUTPUT_DIR", "", 1);
  EXPECT_EQ(resolve_output_dir(cfg), fs::path("runs/x"));
  ::setenv("MOME_OUTPUT_DIR", "/tmp/elsewhere", 1);
  EXPECT_EQ(resolve_output_dir(cfg), fs::path("/tmp/elsewhere"));
  ::unsetenv("MOME_OUTPUT_DIR");
}

TEST(Config, ArmFlags) {
  ASSERT_EQ(all_arms().size(), 4u);
  EXPECT_EQ(arm_flags(AblationArm::full), (training::AblationFlags{true, true, true}));
  EXPECT_EQ(arm_flags(AblationArm::no_description), (training::AblationFlags{false, true, true}));
  EXPECT_EQ(arm_flags(AblationArm::no_correlation_no_moe).use_moe, false);
  for (auto arm : all_arms()) EXPECT_EQ(ablation_arm_from_string(to_string(arm)), arm);
  EXPECT_THROW(ablation_arm_from_string("half"), std::invalid_argument);
}

// ------------------------------------------------------------ checkpoints --

backbone::ModelConfig tiny_model() {
  backbone::ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.n_layers_enc = 1;
  c.n_layers_dec = 1;
  return c;
}

training::SourceArtifact fresh_source(const backbone::ModelConfig& mc, const std::string& id) {
  training::SourceArtifact s;
  s.task_id = id;
  s.description_text = "copy the sequence.";
  s.prompt = prompts::TaskPrompt{oracle::random_tensor({4, mc.d_model}, 1, 0.1, false), id};
  Rng rng(3);
  s.experts.task_id = id;
  for (std::size_t l = 0; l < mc.n_layers(); ++l)
    s.experts.layers.push_back(experts::make_expert(mc.d_model, 4, experts::ExpertKind::lora, l, id, rng));
  return s;
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const auto model = backbone::Transformer::init(tiny_model(), 5);
  const auto a = fresh_dir("ckpt_a"), b = fresh_dir("ckpt_b");
  save_checkpoint(backbone_checkpoint(model, 5, R"({"k":1})"), a);
  const auto loaded = load_checkpoint(a);
  save_checkpoint(loaded, b);
  EXPECT_EQ(slurp(a / kManifestFile), slurp(b / kManifestFile));
  EXPECT_EQ(slurp(a / kBlobFile), slurp(b / kBlobFile));
  const auto back = backbone_from_checkpoint(loaded);
  EXPECT_EQ(training::checksums(back.parameters()), training::checksums(model.parameters()));
  EXPECT_EQ(back.config(), model.config());
}

TEST(Checkpoint, TruncatedBlobNamesTensor) {
  const auto model = backbone::Transformer::init(tiny_model(), 5);
  const auto dir = fresh_dir("ckpt_trunc");
  const auto ckpt = backbone_checkpoint(model, 5, "{}");
  save_checkpoint(ckpt, dir);
  const auto size = fs::file_size(dir / kBlobFile);
  fs::resize_file(dir / kBlobFile, size - 8);
  try {
    load_checkpoint(dir);
    FAIL() << "accepted";
  } catch (const ChecksumError& e) {
    EXPECT_EQ(e.tensor(), ckpt.tensors.back().name);
    EXPECT_NE(std::string(e.what()).find(ckpt.tensors.back().name), std::string::npos);
  }
}

TEST(Checkpoint, CorruptByteIsDetected) {
  const auto model = backbone::Transformer::init(tiny_model(), 5);
  const auto dir = fresh_dir("ckpt_flip");
  const auto ckpt = backbone_checkpoint(model, 5, "{}");
  save_checkpoint(ckpt, dir);
  std::string blob = slurp(dir / kBlobFile);
  const std::size_t first_bytes = ckpt.tensors[0].tensor.size() * sizeof(double);
  blob[first_bytes + 3] ^= 0x10;
  std::ofstream(dir / kBlobFile, std::ios::binary | std::ios::trunc) << blob;
  try {
    load_checkpoint(dir);
    FAIL() << "accepted";
  } catch (const ChecksumError& e) {
    EXPECT_EQ(e.tensor(), ckpt.tensors[1].name);
  }
}

TEST(Checkpoint, MissingManifestAndWrongKind) {
  EXPECT_THROW(load_checkpoint(fresh_dir("empty")), CheckpointError);
  const auto model = backbone::Transformer::init(tiny_model(), 5);
  const auto dir = fresh_dir("ckpt_kind");
  save_checkpoint(backbone_checkpoint(model, 5, "{}"), dir);
  EXPECT_THROW(source_from_checkpoint(load_checkpoint(dir)), CheckpointError);
}

TEST(Checkpoint, FreshSourceKeepsZeroUpProjection) {
  const auto mc = tiny_model();
  const auto src = fresh_source(mc, "copy");
  const auto dir = fresh_dir("ckpt_src");
  save_checkpoint(source_checkpoint(src, mc, 42, "{}"), dir);
  const auto back = source_from_checkpoint(load_checkpoint(dir));
  ASSERT_EQ(back.experts.layers.size(), mc.n_layers());
  for (const auto& e : back.experts.layers) {
    const Tensor up = e.w_up;
    for (double v : up.data()) ASSERT_EQ(v, 0.0);
    EXPECT_EQ(e.kind, experts::ExpertKind::lora);
  }
  EXPECT_EQ(training::checksums(training::source_tensors(back)), training::checksums(training::source_tensors(src)));
  EXPECT_EQ(back.description_text, src.description_text);
  EXPECT_EQ(back.prompt_init, src.prompt_init);
}

TEST(Checkpoint, TargetVerifiesItsSources) {
  const auto mc = tiny_model();
  const auto model = backbone::Transformer::init(mc, 5);
  auto stage1 = training::stage1_defaults();
  stage1.steps = 4;
  stage1.batch_size = 4;
  stage1.warmup_steps = 1;
  auto stage2 = training::stage2_defaults();
  stage2.steps = 4;
  stage2.batch_size = 4;
  stage2.warmup_steps = 1;
  const auto tasks_all = tasks::default_source_tasks();
  const std::vector<tasks::SyntheticTask> picked{tasks_all[0], tasks_all[2]};
  const auto sources = train_sources(model, picked, stage1, training::PromptInit::description);
  const auto target = tasks::related_token_map(tasks_all[2], 6, "map_c", "substitute each symbol, table c.");
  const auto r = training::train_stage2(model, target, sources, stage2);
  const auto dir = fresh_dir("ckpt_target");
  save_checkpoint(target_checkpoint(r.artifact, sources, mc, 42, "{}"), dir);
  const auto ckpt = load_checkpoint(dir);

  const auto art = target_from_checkpoint(ckpt, sources);
  const training::TargetModel restored(model, sources, art);
  const training::TargetModel in_process(model, sources, r.artifact);
  const auto test = tasks::gen_examples(target, 32, tasks::Split::test);
  const auto ev_a = restored.evaluate(test), ev_b = in_process.evaluate(test);
  EXPECT_EQ(ev_a.exact_match, ev_b.exact_match);
  EXPECT_EQ(ev_a.token_accuracy, ev_b.token_accuracy);
  EXPECT_EQ(training::checksums(restored.backbone().parameters()), r.backbone_checksums);

  const std::vector<training::SourceArtifact> swapped{sources[1], sources[0]};
  EXPECT_THROW(target_from_checkpoint(ckpt, swapped), CheckpointError);
  EXPECT_THROW(target_from_checkpoint(ckpt, std::span(sources).first(1)), CheckpointError);
  auto tampered = sources;
  tampered[1].experts.layers[0].w_up = tampered[1].experts.layers[0].w_up.clone();
  tampered[1].experts.layers[0].w_up.mutable_data()[0] += 1e-12;
  EXPECT_THROW(target_from_checkpoint(ckpt, tampered), CheckpointError);
}

// ------------------------------------------------------------------- csv --

TEST(Csv, HeadersAndRealFormatting) {
  const auto dir = fresh_dir("csv");
  const std::vector<training::StepMetrics> m{{1, 0.5, 0.25, 0.475, 1e-3}};
  write_metrics_csv(dir / "m.csv", m);
  const std::vector<training::GateTrace> g{{1, 0, {0.5, 0.5}}};
  write_gates_csv(dir / "g.csv", g);
  const std::vector<AblationRow> a{{"full", 42, 0.5, 0.75, 100}};
  write_ablation_csv(dir / "a.csv", a);
  const std::vector<FewShotRow> f{{"full", 4, 42, "abc", 0.0, 0.1}};
  write_fewshot_csv(dir / "f.csv", f);
  const auto head = [&](const std::string& file) { return read_csv(dir / file).at(0); };
  using Row = std::vector<std::string>;
  EXPECT_EQ(head("m.csv"), (Row{"step", "nll", "l_moe", "total", "lr"}));
  EXPECT_EQ(head("g.csv"), (Row{"step", "layer", "expert", "weight"}));
  EXPECT_EQ(head("a.csv"), (Row{"arm", "seed", "exact_match", "token_accuracy", "trainable_params"}));
  EXPECT_EQ(head("f.csv"), (Row{"arm", "k", "seed", "sample_digest", "exact_match", "token_accuracy"}));
  EXPECT_EQ(read_csv(dir / "g.csv").size(), 3u);
  EXPECT_EQ(std::stod(format_real(0.1)), 0.1);
  EXPECT_EQ(std::stod(format_real(1.0 / 3.0)), 1.0 / 3.0);
}

// -------------------------------------------------------------- commands --

ExperimentConfig tiny_experiment(const fs::path& out) {
  auto cfg = default_experiment_config();
  cfg.model = tiny_model();
  for (auto* t : {&cfg.pretrain, &cfg.stage1, &cfg.stage2}) {
    t->steps = 8;
    t->warmup_steps = 2;
    t->batch_size = 4;
    t->train_examples = 64;
  }
  const auto all = tasks::default_source_tasks();
  cfg.sources = {all[0], all[2], all[5]};
  cfg.seeds = {1, 2, 3};
  cfg.eval_examples = 16;
  cfg.few_shot.k = {4};
  cfg.few_shot.steps = 4;
  cfg.few_shot.pool = 32;
  cfg.output_dir = out;
  return cfg;
}

class Commands : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    ::unsetenv("MOME_OUTPUT_DIR");
    root_ = new fs::path(fresh_dir("commands"));
    cfg_ = new ExperimentConfig(tiny_experiment(*root_));
    std::ostringstream out, err;
    ASSERT_EQ(run_command("train-source", *cfg_, out, err), 0) << err.str();
    std::ostringstream tout;
    ASSERT_EQ(run_command("train-target", *cfg_, tout, err), 0) << err.str();
    train_target_log_ = new std::string(tout.str());
  }
  static void TearDownTestSuite() {
    delete root_;
    delete cfg_;
    delete train_target_log_;
  }
  static int run(const std::string& cmd, std::string* log = nullptr) {
    std::ostringstream out, err;
    const int rc = run_command(cmd, *cfg_, out, err);
    if (log) *log = out.str() + err.str();
    return rc;
  }
  static fs::path* root_;
  static ExperimentConfig* cfg_;
  static std::string* train_target_log_;
};
fs::path* Commands::root_ = nullptr;
ExperimentConfig* Commands::cfg_ = nullptr;
std::string* Commands::train_target_log_ = nullptr;

TEST_F(Commands, LayoutAfterTraining) {
  const OutputLayout layout{*root_};
  EXPECT_TRUE(fs::exists(layout.root / "config.resolved.json"));
  EXPECT_TRUE(fs::exists(layout.backbone() / kManifestFile));
  for (const auto& t : cfg_->sources) {
    EXPECT_TRUE(fs::exists(layout.source(t.task_id) / kManifestFile)) << t.task_id;
    EXPECT_EQ(read_csv(layout.source(t.task_id) / "metrics.csv").size(), 1u + cfg_->stage1.steps);
  }
  EXPECT_TRUE(fs::exists(layout.target() / "gates.csv"));
  EXPECT_EQ(read_csv(layout.target() / "gates.csv").size(), 1u + cfg_->stage2.steps * tiny_model().n_layers() * 3u);
}

TEST_F(Commands, EvaluateAgreesWithTrainTarget) {
  ASSERT_EQ(run("evaluate"), 0);
  const auto rows = read_csv(*root_ / "evaluation.csv");
  ASSERT_EQ(rows.size(), 1u + cfg_->sources.size() + 1u);
  const auto& last = rows.back();
  EXPECT_EQ(last[0], cfg_->target.task_id);
  const std::string expect = "test exact_match " + last[2] + ", token_accuracy " + last[3];
  EXPECT_NE(train_target_log_->find(expect), std::string::npos) << *train_target_log_ << "\nwant: " << expect;
}

TEST_F(Commands, ExportGatesRowsSumToOne) {
  ASSERT_EQ(run("export-gates"), 0);
  const auto summary = read_csv(*root_ / "gate_summary.csv");
  ASSERT_EQ(summary.size(), 1u + cfg_->sources.size());
  double total = 0.0;
  for (std::size_t i = 1; i < summary.size(); ++i) total += std::stod(summary[i][2]);
  EXPECT_NEAR(total, 1.0, 1e-6);
  const auto layers = read_csv(*root_ / "gate_layers.csv");
  ASSERT_EQ(layers.size(), 1u + tiny_model().n_layers() * cfg_->sources.size());
  for (std::size_t l = 0; l < tiny_model().n_layers(); ++l) {
    double s = 0.0;
    for (std::size_t i = 1; i < layers.size(); ++i)
      if (layers[i][1] == std::to_string(l)) s += std::stod(layers[i][3]);
    EXPECT_NEAR(s, 1.0, 1e-6) << "layer " << l;
  }
}

TEST_F(Commands, AblationMatrix) {
  std::string log;
  ASSERT_EQ(run("ablate", &log), 0) << log;
  const auto rows = read_csv(*root_ / "ablation.csv");
  ASSERT_EQ(rows.size(), 1u + 12u);
  std::map<std::string, std::size_t> params;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    params[rows[i][0]] = std::stoul(rows[i][4]);
    const double em = std::stod(rows[i][2]);
    EXPECT_GE(em, 0.0);
    EXPECT_LE(em, 1.0);
  }
  ASSERT_EQ(params.size(), 4u);
  EXPECT_LT(params.at("no_correlation_no_moe"), params.at("full"));
  EXPECT_EQ(params.at("no_description"), params.at("full"));
  EXPECT_NE(log.find("arm,mean_exact_match"), std::string::npos);
}

TEST_F(Commands, FewShotSweep) {
  ASSERT_EQ(run("fewshot"), 0);
  const auto rows = read_csv(*root_ / "fewshot.csv");
  ASSERT_EQ(rows.size(), 1u + 4u * 3u);
  std::map<std::string, std::set<std::string>> digests;
  for (std::size_t i = 1; i < rows.size(); ++i) digests[rows[i][2]].insert(rows[i][3]);
  for (const auto& [seed, ds] : digests) EXPECT_EQ(ds.size(), 1u) << "seed " << seed;
}

TEST_F(Commands, ErrorsAndExitCodes) {
  std::ostringstream out, err;
  EXPECT_EQ(run_command("frobnicate", *cfg_, out, err), 2);
  auto empty = tiny_experiment(fresh_dir("nothing"));
  EXPECT_EQ(run_command("evaluate", empty, out, err), 1);
  EXPECT_EQ(run_command("train-target", empty, out, err), 1);
  EXPECT_NE(err.str().find("train-source"), std::string::npos) << err.str();
  const auto bad = fresh_dir("badcfg") / "bad.json";
  std::ofstream(bad) << R"({"seeds": []})";
  std::ostringstream err2;
  EXPECT_EQ(run_command("evaluate", bad, out, err2), 2);
  EXPECT_NE(err2.str().find("seeds"), std::string::npos) << err2.str();
}

TEST(CommandNames, AllSubcommandsPresent) {
  EXPECT_EQ(command_names(), (std::vector<std::string>{"train-source", "train-target", "evaluate", "ablate", "fewshot",
                                                      "export-gates"}));
}

}  // namespace
