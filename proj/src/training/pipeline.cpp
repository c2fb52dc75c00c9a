// SPDX-License-Identifier: Apache-2.0

#include "mome/training/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <unordered_map>

#include "mome/autodiff/ops.hpp"
#include "mome/common/checksum.hpp"
#include "mome/common/rng.hpp"
#include "mome/tasks/tokenizer.hpp"
#include "mome/training/losses.hpp"

namespace mome::training {

using ad::Tensor;

namespace {

constexpr std::size_t kGateStatExamples = 64;

struct BatchLoss {
  Tensor total;
  double nll = 0.0;
  double l_moe = 0.0;
};

using BatchLossFn = std::function<BatchLoss(std::size_t step)>;

std::vector<StepMetrics> run_loop(std::vector<NamedTensor>& params, const TrainConfig& cfg, const BatchLossFn& loss_fn) {
  for (auto& p : params) p.tensor.set_requires_grad(true);
  AdamW optimizer(cfg.adamw());
  std::vector<StepMetrics> metrics;
  metrics.reserve(cfg.steps);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    BatchLoss loss = loss_fn(step);
    const double total = loss.total.item();
    if (!std::isfinite(total)) {
      throw TrainingDivergedError("training diverged: non-finite loss at step " + std::to_string(step), step);
    }
    const ad::GradientMap grads = ad::backward(loss.total);
    double lr = 0.0;
    try {
      lr = optimizer.step(params, grads, step);
    } catch (const NonFiniteGradientError& e) {
      throw TrainingDivergedError(std::string("training diverged: ") + e.what(), step);
    }
    metrics.push_back({step, loss.nll, loss.l_moe, total, lr});
  }
  for (auto& p : params) p.tensor.set_requires_grad(false);
  return metrics;
}

// Cycles through a seeded shuffle of the dataset, reshuffling at each wrap.
class BatchSampler {
 public:
  BatchSampler(const tasks::Dataset& data, std::size_t batch_size, std::uint64_t seed)
      : data_(data), batch_(std::min(batch_size, data.size())), rng_(seed), order_(data.size()) {
    if (data.size() == 0) throw std::invalid_argument("training set is empty");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_.shuffle(std::span<std::size_t>(order_));
  }

  std::vector<const tasks::Example*> next() {
    std::vector<const tasks::Example*> out;
    out.reserve(batch_);
    while (out.size() < batch_) {
      if (pos_ == order_.size()) {
        rng_.shuffle(std::span<std::size_t>(order_));
        pos_ = 0;
      }
      out.push_back(&data_.pairs[order_[pos_++]]);
    }
    return out;
  }

 private:
  const tasks::Dataset& data_;
  std::size_t batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

Tensor batch_mean(const std::vector<Tensor>& terms) {
  return ad::scale(ad::add_n(terms), 1.0 / static_cast<double>(terms.size()));
}

prompts::EmbedFn embed_fn(const Transformer& model) {
  return [&model](std::span<const int> ids) {
    ad::NoGradGuard guard;
    return model.embed(ids);
  };
}

std::size_t description_token_count(const std::string& text) { return tasks::tokenize(text).size(); }

std::optional<prompts::TaskPrompt> make_prompt(const Transformer& model, const std::string& task_id,
                                               const std::string& description, bool from_description,
                                               std::uint64_t seed) {
  if (from_description) {
    return prompts::init_prompt_from_description({task_id, description}, embed_fn(model), model.config().max_len);
  }
  return prompts::init_prompt_from_random_tokens(task_id, description_token_count(description), embed_fn(model),
                                                 seed);
}

std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  const auto data = logits.data();
  const std::size_t v = logits.cols();
  for (std::size_t r = 0; r < out.size(); ++r) {
    const auto row = data.subspan(r * v, v);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

tasks::EvalResult run_eval(const Transformer& model, const Tensor& prompt, backbone::LayerPlugins* plugins,
                           const tasks::Dataset& dataset) {
  ad::NoGradGuard guard;
  std::size_t max_target = 0;
  for (const auto& ex : dataset.pairs) max_target = std::max(max_target, ex.target.size());
  const auto decode = [&](const tasks::Example& ex) {
    return model.greedy_decode(to_token_batch(ex), prompt, plugins, max_target + 2);
  };
  const auto teacher = [&](const tasks::Example& ex) {
    return argmax_rows(model.seq2seq_forward(to_token_batch(ex), prompt, plugins).logits);
  };
  return tasks::evaluate(decode, teacher, dataset);
}

void set_requires_grad(std::span<const NamedTensor> tensors, bool value) {
  for (const auto& t : tensors) {
    Tensor handle = t.tensor;
    handle.set_requires_grad(value);
  }
}

}  // namespace

std::string to_string(PromptInit init) {
  switch (init) {
    case PromptInit::description: return "description";
    case PromptInit::random_tokens: return "random_tokens";
    case PromptInit::none: return "none";
  }
  throw std::logic_error("unknown prompt init");
}

PromptInit prompt_init_from_string(const std::string& name) {
  for (auto init : {PromptInit::description, PromptInit::random_tokens, PromptInit::none}) {
    if (to_string(init) == name) return init;
  }
  throw std::invalid_argument("unknown prompt init '" + name + "'");
}

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) throw std::invalid_argument("stage must be 1 or 2, got " + std::to_string(stage));
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be non-negative");
  if (balance_sign != 1.0 && balance_sign != -1.0) throw std::invalid_argument("balance_sign must be +1 or -1");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
  if (steps == 0) throw std::invalid_argument("steps must be at least 1");
  if (train_examples == 0) throw std::invalid_argument("train_examples must be at least 1");
  if (expert_rank == 0) throw std::invalid_argument("expert_rank must be at least 1");
  if (adapter_rank == 0) throw std::invalid_argument("adapter_rank must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("AdamW betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw std::invalid_argument("adam_eps must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be non-negative");
}

AdamWConfig TrainConfig::adamw() const {
  return {learning_rate, beta1, beta2, adam_eps, weight_decay, warmup_steps, steps};
}

double TrainConfig::epochs() const {
  return static_cast<double>(steps * batch_size) / static_cast<double>(train_examples);
}

TrainConfig pretrain_defaults() {
  TrainConfig cfg;
  cfg.stage = 1;
  cfg.learning_rate = 2e-3;
  cfg.batch_size = 16;
  cfg.warmup_steps = 50;
  cfg.steps = 1000;
  cfg.weight_decay = 0.0;
  return cfg;
}

TrainConfig stage1_defaults() {
  TrainConfig cfg;
  cfg.learning_rate = 3e-3;
  return cfg;
}

TrainConfig stage2_defaults() {
  TrainConfig cfg;
  cfg.stage = 2;
  cfg.learning_rate = 1e-3;
  cfg.warmup_steps = 30;
  cfg.steps = 300;
  return cfg;
}

backbone::TokenBatch to_token_batch(const tasks::Example& example) {
  backbone::TokenBatch batch;
  batch.input_ids = example.input;
  batch.input_ids.push_back(tasks::kEosId);
  batch.target_ids = example.target;
  batch.target_ids.push_back(tasks::kEosId);
  return batch;
}

std::vector<NamedTensor> source_tensors(const SourceArtifact& source) {
  std::vector<NamedTensor> out;
  const std::string base = "source." + source.task_id + ".";
  if (source.prompt) out.push_back({base + "prompt", source.prompt->matrix});
  for (std::size_t l = 0; l < source.experts.layers.size(); ++l) {
    const auto& e = source.experts.layers[l];
    out.push_back({base + "expert." + std::to_string(l) + ".w_down", e.w_down});
    out.push_back({base + "expert." + std::to_string(l) + ".w_up", e.w_up});
  }
  return out;
}

std::vector<NamedTensor> trainable_set(const SourceArtifact& source) { return source_tensors(source); }

std::vector<NamedTensor> trainable_set(const Transformer& model, const TargetArtifact& target) {
  std::vector<NamedTensor> out;
  if (target.target_prompt) out.push_back({"target.prompt", target.target_prompt->matrix});
  for (const auto& g : target.modules.gates) {
    out.push_back({"target.gate." + std::to_string(g.layer_index), g.w_gate});
  }
  for (const auto& a : target.modules.adapters) {
    out.push_back({"target.adapter." + std::to_string(a.layer_index) + ".w_down", a.w_down});
    out.push_back({"target.adapter." + std::to_string(a.layer_index) + ".w_up", a.w_up});
  }
  for (auto& ln : model.layer_norm_parameters()) out.push_back(std::move(ln));
  return out;
}

std::vector<NamedTensor> frozen_set(int stage, const Transformer& model, std::span<const SourceArtifact> sources) {
  if (stage != 1 && stage != 2) throw std::invalid_argument("stage must be 1 or 2");
  std::vector<NamedTensor> out;
  if (stage == 1) return model.parameters();
  std::unordered_map<const void*, bool> ln;
  for (const auto& t : model.layer_norm_parameters()) ln[t.tensor.id()] = true;
  for (auto& t : model.parameters()) {
    if (!ln.contains(t.tensor.id())) out.push_back(std::move(t));
  }
  for (const auto& s : sources) {
    for (auto& t : source_tensors(s)) out.push_back(std::move(t));
  }
  return out;
}

std::map<std::string, std::string> checksums(std::span<const NamedTensor> tensors) {
  std::map<std::string, std::string> out;
  for (const auto& t : tensors) out[t.name] = checksum_hex(t.tensor.data());
  return out;
}

PretrainResult pretrain_backbone(const backbone::ModelConfig& config, const TrainConfig& cfg) {
  cfg.validate();
  config.validate();
  PretrainResult result{Transformer::init(config, cfg.seed), {}};
  Transformer& model = result.model;
  std::vector<NamedTensor> params = model.parameters();
  Rng rng(mix_seed(cfg.seed, 0x5052));
  const std::size_t n_symbols = tasks::kAlphabet.size();
  const std::size_t max_prefix = 24;
  const std::size_t max_string = 10;
  const auto random_ids = [&](std::size_t n) {
    std::vector<int> ids(n);
    for (auto& id : ids) id = 3 + static_cast<int>(rng.uniform_below(n_symbols));
    return ids;
  };
  const auto loss_fn = [&](std::size_t) {
    std::vector<Tensor> nlls;
    nlls.reserve(cfg.batch_size);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const std::size_t prefix_len = rng.uniform_below(max_prefix + 1);
      const std::vector<int> prefix = random_ids(prefix_len);
      tasks::Example ex;
      ex.input = random_ids(1 + rng.uniform_below(max_string));
      ex.target = ex.input;
      const Tensor prompt = prefix_len > 0 ? model.embed(prefix) : Tensor{};
      const auto batch = to_token_batch(ex);
      nlls.push_back(nll_loss(model.seq2seq_forward(batch, prompt, nullptr).logits, batch.target_ids));
    }
    BatchLoss loss;
    loss.total = batch_mean(nlls);
    loss.nll = loss.total.item();
    return loss;
  };
  result.metrics = run_loop(params, cfg, loss_fn);
  model.set_requires_grad(false);
  return result;
}

Stage1Result train_stage1(const Transformer& backbone, const tasks::SyntheticTask& task, const TrainConfig& cfg,
                          PromptInit init) {
  cfg.validate();
  if (cfg.stage != 1) throw std::invalid_argument("train_stage1 requires a stage-1 config");
  tasks::validate_task(task);
  backbone.set_requires_grad(false);

  const auto& mc = backbone.config();
  Stage1Result result;
  SourceArtifact& art = result.artifact;
  art.task_id = task.task_id;
  art.description_text = task.description.text;
  art.prompt_init = init;
  if (init != PromptInit::none) {
    art.prompt = make_prompt(backbone, task.task_id, task.description.text, init == PromptInit::description,
                             mix_seed(cfg.seed, 0x5031));
  }
  Rng rng(mix_seed(cfg.seed, 0x4558));
  art.experts.task_id = task.task_id;
  for (std::size_t l = 0; l < mc.n_layers(); ++l) {
    art.experts.layers.push_back(experts::make_expert(mc.d_model, cfg.expert_rank, cfg.kind, l, task.task_id, rng));
  }

  const tasks::Dataset train = tasks::gen_examples(task, cfg.train_examples, tasks::Split::train);
  BatchSampler sampler(train, cfg.batch_size, mix_seed(cfg.seed, 0x4241));
  SourcePlugins plugins(art.experts);
  std::vector<NamedTensor> params = trainable_set(art);
  const auto loss_fn = [&](std::size_t) {
    const Tensor prompt = art.prompt ? art.prompt->matrix : Tensor{};
    std::vector<Tensor> nlls;
    for (const auto* ex : sampler.next()) {
      const auto batch = to_token_batch(*ex);
      nlls.push_back(nll_loss(backbone.seq2seq_forward(batch, prompt, &plugins).logits, batch.target_ids));
    }
    BatchLoss loss;
    loss.total = batch_mean(nlls);
    loss.nll = loss.total.item();
    return loss;
  };
  result.metrics = run_loop(params, cfg, loss_fn);
  return result;
}

TargetArtifact init_target_artifact(const Transformer& backbone, const tasks::SyntheticTask& target,
                                    std::span<const SourceArtifact> sources, const TrainConfig& cfg,
                                    const AblationFlags& flags) {
  cfg.validate();
  const auto& mc = backbone.config();
  if (flags.use_moe && sources.empty()) throw std::invalid_argument("stage 2 needs at least one source artifact");
  for (const auto& s : sources) {
    if (s.experts.layers.size() != mc.n_layers()) {
      throw std::invalid_argument("source '" + s.task_id + "' has " + std::to_string(s.experts.layers.size()) +
                                  " experts, backbone has " + std::to_string(mc.n_layers()) + " layers");
    }
    for (const auto& e : s.experts.layers) {
      if (e.d_model() != mc.d_model) {
        throw std::invalid_argument("source '" + s.task_id + "' has d=" + std::to_string(e.d_model()) +
                                    ", backbone has d=" + std::to_string(mc.d_model));
      }
    }
    if (s.prompt && s.prompt->matrix.cols() != mc.d_model) {
      throw std::invalid_argument("source '" + s.task_id + "' prompt has d=" + std::to_string(s.prompt->matrix.cols()) +
                                  ", backbone has d=" + std::to_string(mc.d_model));
    }
    if (flags.use_correlation && !s.prompt) {
      throw std::invalid_argument("source '" + s.task_id + "' has no prompt but the correlation prompt is enabled");
    }
  }

  TargetArtifact art;
  art.task_id = target.task_id;
  art.description_text = target.description.text;
  art.flags = flags;
  art.adapter_residual = cfg.adapter_residual;
  art.scale_correlation_attention = cfg.scale_correlation_attention;
  for (const auto& s : sources) art.source_task_ids.push_back(s.task_id);
  if (flags.use_correlation) {
    art.target_prompt = make_prompt(backbone, target.task_id, target.description.text, flags.use_description,
                                    mix_seed(cfg.seed, 0x5032));
  }
  Rng rng(mix_seed(cfg.seed, 0x5441));
  for (std::size_t l = 0; l < mc.n_layers(); ++l) {
    const auto kind = l < mc.n_layers_enc ? backbone::BlockKind::encoder : backbone::BlockKind::decoder;
    if (flags.use_moe) art.modules.gates.push_back(gating::make_gate(mc.d_model, sources.size(), l, kind));
    art.modules.adapters.push_back(
        experts::make_expert(mc.d_model, cfg.adapter_rank, experts::ExpertKind::adapter, l, target.task_id, rng));
  }
  for (const auto& ln : backbone.layer_norm_parameters()) {
    art.layer_norm_deltas.push_back({ln.name, Tensor::zeros(ln.tensor.shape())});
  }
  return art;
}

Transformer apply_layer_norm_deltas(const Transformer& backbone, std::span<const NamedTensor> deltas) {
  Transformer out = backbone.clone();
  std::unordered_map<std::string, Tensor> by_name;
  for (const auto& ln : out.layer_norm_parameters()) by_name[ln.name] = ln.tensor;
  for (const auto& d : deltas) {
    auto it = by_name.find(d.name);
    if (it == by_name.end()) throw std::invalid_argument("LayerNorm delta '" + d.name + "' matches no parameter");
    if (it->second.shape() != d.tensor.shape()) {
      throw ad::DimensionError("LayerNorm delta '" + d.name + "' has shape " + ad::shape_to_string(d.tensor.shape()) +
                               ", parameter has " + ad::shape_to_string(it->second.shape()));
    }
    auto values = it->second.mutable_data();
    const auto delta = d.tensor.data();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += delta[i];
  }
  return out;
}

TargetModel::TargetModel(const Transformer& backbone, std::vector<SourceArtifact> sources, TargetArtifact artifact)
    : backbone_(apply_layer_norm_deltas(backbone, artifact.layer_norm_deltas)),
      sources_(std::move(sources)),
      artifact_(std::move(artifact)) {
  backbone_.set_requires_grad(false);
  for (const auto& s : sources_) {
    set_requires_grad(source_tensors(s), false);
    source_experts_.push_back(s.experts);
  }
}

Tensor TargetModel::prompt() const {
  if (!artifact_.flags.use_correlation || !artifact_.target_prompt) return {};
  prompts::PromptBank bank;
  for (const auto& s : sources_) {
    if (s.prompt) bank.source_prompts.push_back(*s.prompt);
  }
  bank.target_prompt = *artifact_.target_prompt;
  return prompts::build_correlation_prompt(bank, artifact_.scale_correlation_attention);
}

TargetPlugins TargetModel::make_plugins() const {
  return TargetPlugins(source_experts_, artifact_.modules, artifact_.flags.use_moe, artifact_.adapter_residual);
}

backbone::ForwardResult TargetModel::forward(const tasks::Example& example, TargetPlugins& plugins,
                                             const Tensor& prompt) const {
  plugins.reset();
  return backbone_.seq2seq_forward(to_token_batch(example), prompt, &plugins);
}

void TargetModel::refresh_layer_norm_deltas(const Transformer& original) {
  const auto trained = backbone_.layer_norm_parameters();
  const auto base = original.layer_norm_parameters();
  artifact_.layer_norm_deltas.clear();
  for (std::size_t k = 0; k < trained.size(); ++k) {
    const auto a = trained[k].tensor.data();
    const auto b = base.at(k).tensor.data();
    std::vector<double> delta(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) delta[i] = a[i] - b[i];
    artifact_.layer_norm_deltas.push_back({trained[k].name, Tensor::from(trained[k].tensor.shape(), std::move(delta))});
  }
}

tasks::EvalResult TargetModel::evaluate(const tasks::Dataset& dataset) const {
  ad::NoGradGuard guard;
  TargetPlugins plugins = make_plugins();
  return run_eval(backbone_, prompt(), &plugins, dataset);
}

TargetModel::GateStats TargetModel::gate_statistics(const tasks::Dataset& dataset) const {
  GateStats stats;
  if (!artifact_.flags.use_moe || dataset.size() == 0) return stats;
  ad::NoGradGuard guard;
  TargetPlugins plugins = make_plugins();
  const Tensor p = prompt();
  const std::size_t n_layers = artifact_.modules.gates.size();
  stats.mean_weights.assign(n_layers, std::vector<double>(sources_.size(), 0.0));
  double entropy = 0.0;
  for (const auto& ex : dataset.pairs) {
    forward(ex, plugins, p);
    for (std::size_t l = 0; l < n_layers; ++l) {
      const auto w = plugins.mixtures().at(l)->weights.data();
      for (std::size_t i = 0; i < w.size(); ++i) stats.mean_weights[l][i] += w[i];
      entropy += weight_entropy(w);
    }
  }
  const double n = static_cast<double>(dataset.size());
  for (auto& layer : stats.mean_weights) {
    for (auto& v : layer) v /= n;
  }
  stats.mean_entropy = entropy / (n * static_cast<double>(n_layers));
  return stats;
}

Stage2Result train_stage2(const Transformer& backbone, const tasks::SyntheticTask& target,
                          std::span<const SourceArtifact> sources, const TrainConfig& cfg,
                          const Stage2Options& options) {
  cfg.validate();
  if (cfg.stage != 2) throw std::invalid_argument("train_stage2 requires a stage-2 config");
  if (sources.empty() && (options.flags.use_moe || options.flags.use_correlation)) {
    throw std::invalid_argument("stage 2 needs at least one source artifact");
  }
  tasks::validate_task(target);
  backbone.set_requires_grad(false);

  TargetModel model(backbone, std::vector<SourceArtifact>(sources.begin(), sources.end()),
                    init_target_artifact(backbone, target, sources, cfg, options.flags));
  const tasks::Dataset train = options.train_override ? *options.train_override
                                                      : tasks::gen_examples(target, cfg.train_examples,
                                                                            tasks::Split::train);
  BatchSampler sampler(train, cfg.batch_size, mix_seed(cfg.seed, 0x4242));
  TargetPlugins plugins = model.make_plugins();
  const bool use_moe = options.flags.use_moe;
  const std::size_t n_layers = backbone.config().n_layers();
  const std::size_t n_sources = sources.size();

  Stage2Result result;
  std::vector<NamedTensor> params = model.trainables();
  const auto loss_fn = [&](std::size_t step) {
    const Tensor prompt = model.prompt();
    std::vector<Tensor> totals;
    double nll_sum = 0.0;
    double moe_sum = 0.0;
    std::vector<std::vector<double>> weight_sum(n_layers, std::vector<double>(n_sources, 0.0));
    const auto batch = sampler.next();
    for (const auto* ex : batch) {
      const auto fr = model.forward(*ex, plugins, prompt);
      const Tensor nll = nll_loss(fr.logits, to_token_batch(*ex).target_ids);
      nll_sum += nll.item();
      if (!use_moe) {
        totals.push_back(nll);
        continue;
      }
      std::vector<gating::MixtureOutput> mixtures;
      std::vector<Tensor> outputs;
      for (std::size_t l = 0; l < n_layers; ++l) {
        mixtures.push_back(*plugins.mixtures().at(l));
        outputs.push_back(fr.acts.layers.at(l).layer_output);
        const auto w = mixtures.back().weights.data();
        for (std::size_t i = 0; i < n_sources; ++i) weight_sum[l][i] += w[i];
      }
      if (cfg.alpha > 0.0) {
        const Tensor l_moe = moe_balance_loss(mixtures, outputs);
        moe_sum += l_moe.item();
        totals.push_back(total_loss(nll, l_moe, cfg.alpha, cfg.balance_sign));
      } else {
        ad::NoGradGuard guard;
        moe_sum += moe_balance_loss(mixtures, outputs).item();
        totals.push_back(nll);
      }
    }
    const double b = static_cast<double>(batch.size());
    if (use_moe && (options.gate_trace_limit == 0 || step <= options.gate_trace_limit)) {
      for (std::size_t l = 0; l < n_layers; ++l) {
        GateTrace trace{step, l, weight_sum[l]};
        for (auto& w : trace.weights) w /= b;
        result.gate_trace.push_back(std::move(trace));
      }
    }
    BatchLoss loss;
    loss.total = batch_mean(totals);
    loss.nll = nll_sum / b;
    loss.l_moe = moe_sum / b;
    return loss;
  };
  result.metrics = run_loop(params, cfg, loss_fn);

  model.refresh_layer_norm_deltas(backbone);
  result.artifact = model.artifact();
  const TargetModel restored(backbone, std::vector<SourceArtifact>(sources.begin(), sources.end()), result.artifact);
  result.final_gate_means =
      restored.gate_statistics(tasks::gen_examples(target, kGateStatExamples, tasks::Split::dev)).mean_weights;
  result.backbone_checksums = checksums(restored.backbone().parameters());
  return result;
}

tasks::EvalResult evaluate_source(const Transformer& backbone, const SourceArtifact& source,
                                  const tasks::Dataset& dataset) {
  SourcePlugins plugins(source.experts);
  return run_eval(backbone, source.prompt ? source.prompt->matrix : Tensor{}, &plugins, dataset);
}

tasks::EvalResult evaluate_backbone(const Transformer& backbone, const tasks::Dataset& dataset) {
  return run_eval(backbone, Tensor{}, nullptr, dataset);
}

double weight_entropy(std::span<const double> weights) {
  double h = 0.0;
  for (double w : weights) {
    if (w > 0.0) h -= w * std::log(w);
  }
  return h;
}

}  // namespace mome::training
