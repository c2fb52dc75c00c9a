// SPDX-License-Identifier: Apache-2.0

#include "mome/backbone/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mome/autodiff/ops.hpp"
#include "mome/common/rng.hpp"
#include "mome/tasks/tokenizer.hpp"

namespace mome::backbone {

namespace {

constexpr double kMaskedScore = -1e9;

Tensor normal_tensor(Rng& rng, ad::Shape shape, double stddev) {
  std::vector<double> v(ad::shape_size(shape));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor::from(std::move(shape), std::move(v));
}

LayerNormParams make_ln(std::size_t d) { return {Tensor::filled({d}, 1.0), Tensor::zeros({d})}; }

AttentionParams make_attention(Rng& rng, std::size_t d) {
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  return {normal_tensor(rng, {d, d}, s), normal_tensor(rng, {d, d}, s), normal_tensor(rng, {d, d}, s),
          normal_tensor(rng, {d, d}, s)};
}

FfnParams make_ffn(Rng& rng, std::size_t d, std::size_t d_ff) {
  return {normal_tensor(rng, {d, d_ff}, 1.0 / std::sqrt(static_cast<double>(d))), Tensor::zeros({d_ff}),
          normal_tensor(rng, {d_ff, d}, 1.0 / std::sqrt(static_cast<double>(d_ff))), Tensor::zeros({d})};
}

Tensor ln(const Tensor& x, const LayerNormParams& p, double eps) { return ad::layer_norm(x, p.gamma, p.beta, eps); }

Tensor key_padding_mask(std::size_t q_len, const std::vector<std::uint8_t>& key_mask) {
  if (std::all_of(key_mask.begin(), key_mask.end(), [](std::uint8_t m) { return m != 0; })) return {};
  const std::size_t k_len = key_mask.size();
  std::vector<double> v(q_len * k_len, 0.0);
  for (std::size_t i = 0; i < q_len; ++i)
    for (std::size_t j = 0; j < k_len; ++j)
      if (!key_mask[j]) v[i * k_len + j] = kMaskedScore;
  return Tensor::from({q_len, k_len}, std::move(v));
}

std::vector<std::uint8_t> encoder_key_mask(const TokenBatch& batch, std::size_t prompt_len) {
  std::vector<std::uint8_t> mask(prompt_len + batch.input_ids.size(), 1);
  if (!batch.attention_mask.empty()) {
    if (batch.attention_mask.size() != batch.input_ids.size()) {
      throw ad::DimensionError("attention_mask length differs from input_ids length");
    }
    std::copy(batch.attention_mask.begin(), batch.attention_mask.end(),
              mask.begin() + static_cast<std::ptrdiff_t>(prompt_len));
  }
  return mask;
}

void push_ln(std::vector<NamedTensor>& out, const std::string& prefix, const LayerNormParams& p) {
  out.push_back({prefix + ".gamma", p.gamma});
  out.push_back({prefix + ".beta", p.beta});
}

void push_attention(std::vector<NamedTensor>& out, const std::string& prefix, const AttentionParams& p) {
  out.push_back({prefix + ".wq", p.wq});
  out.push_back({prefix + ".wk", p.wk});
  out.push_back({prefix + ".wv", p.wv});
  out.push_back({prefix + ".wo", p.wo});
}

void push_ffn(std::vector<NamedTensor>& out, const std::string& prefix, const FfnParams& p) {
  out.push_back({prefix + ".w_in", p.w_in});
  out.push_back({prefix + ".b_in", p.b_in});
  out.push_back({prefix + ".w_out", p.w_out});
  out.push_back({prefix + ".b_out", p.b_out});
}

}  // namespace

void ModelConfig::validate() const {
  if (d_model == 0 || n_layers_enc == 0 || n_layers_dec == 0 || n_heads == 0 || d_ff == 0 || vocab_size == 0 ||
      max_len == 0) {
    throw std::invalid_argument("model config: all sizes must be at least 1");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("model config: d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                                std::to_string(n_heads));
  }
  if (vocab_size < static_cast<std::size_t>(tasks::kVocabSize)) {
    throw std::invalid_argument("model config: vocab_size must cover the tokenizer's " +
                                std::to_string(tasks::kVocabSize) + " symbols");
  }
  if (!(ln_eps > 0.0)) throw std::invalid_argument("model config: ln_eps must be positive");
}

std::string to_string(BlockKind kind) { return kind == BlockKind::encoder ? "encoder" : "decoder"; }

Tensor ffn_preactivation(const FfnParams& ffn, const Tensor& h) { return ad::add_bias(ad::matmul(h, ffn.w_in), ffn.b_in); }

Tensor ffn_forward(const FfnParams& ffn, const Tensor& h) {
  return ad::add_bias(ad::matmul(ad::relu(ffn_preactivation(ffn, h)), ffn.w_out), ffn.b_out);
}

Tensor causal_mask(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) v[i * n + j] = kMaskedScore;
  return Tensor::from({n, n}, std::move(v));
}

Tensor multi_head_attention(const Tensor& query_in, const Tensor& kv_in, const AttentionParams& params,
                            std::size_t n_heads, const Tensor& mask) {
  const std::size_t d = params.wq.rows();
  if (query_in.cols() != d || kv_in.cols() != d) {
    throw ad::DimensionError("attention: inputs " + ad::shape_to_string(query_in.shape()) + " and " +
                             ad::shape_to_string(kv_in.shape()) + " do not match d=" + std::to_string(d));
  }
  if (n_heads == 0 || d % n_heads != 0) throw ad::DimensionError("attention: d is not divisible by n_heads");
  if (mask.defined() && (mask.rows() != query_in.rows() || mask.cols() != kv_in.rows())) {
    throw ad::DimensionError("attention: mask " + ad::shape_to_string(mask.shape()) + " does not match " +
                             std::to_string(query_in.rows()) + "x" + std::to_string(kv_in.rows()));
  }
  const std::size_t dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor q = ad::matmul(query_in, params.wq);
  const Tensor k = ad::matmul(kv_in, params.wk);
  const Tensor v = ad::matmul(kv_in, params.wv);
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const Tensor qh = n_heads == 1 ? q : ad::slice_cols(q, h * dh, (h + 1) * dh);
    const Tensor kh = n_heads == 1 ? k : ad::slice_cols(k, h * dh, (h + 1) * dh);
    const Tensor vh = n_heads == 1 ? v : ad::slice_cols(v, h * dh, (h + 1) * dh);
    Tensor scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
    if (mask.defined()) scores = ad::add(scores, mask);
    heads.push_back(ad::matmul(ad::softmax_lastdim(scores), vh));
  }
  const Tensor merged = n_heads == 1 ? heads[0] : ad::concat_cols(heads);
  return ad::matmul(merged, params.wo);
}

Transformer Transformer::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t d = config.d_model;
  Transformer m;
  m.config_ = config;
  m.token_embedding = normal_tensor(rng, {config.vocab_size, d}, 0.5);
  m.position_embedding = normal_tensor(rng, {config.max_len, d}, 0.1);
  for (std::size_t i = 0; i < config.n_layers_enc; ++i) {
    EncoderLayer layer;
    layer.ln_attn = make_ln(d);
    layer.attn = make_attention(rng, d);
    layer.ln_ffn = make_ln(d);
    layer.ffn = make_ffn(rng, d, config.d_ff);
    m.encoder.push_back(std::move(layer));
  }
  m.encoder_final_ln = make_ln(d);
  for (std::size_t i = 0; i < config.n_layers_dec; ++i) {
    DecoderLayer layer;
    layer.ln_self = make_ln(d);
    layer.self_attn = make_attention(rng, d);
    layer.ln_cross = make_ln(d);
    layer.cross_attn = make_attention(rng, d);
    layer.ln_ffn = make_ln(d);
    layer.ffn = make_ffn(rng, d, config.d_ff);
    m.decoder.push_back(std::move(layer));
  }
  m.decoder_final_ln = make_ln(d);
  m.lm_head = normal_tensor(rng, {d, config.vocab_size}, 1.0 / std::sqrt(static_cast<double>(d)));
  return m;
}

Transformer Transformer::clone() const {
  Transformer m = *this;
  // The member-wise copy shares nodes; rebind every handle to a fresh leaf.
  m.token_embedding = token_embedding.clone(token_embedding.requires_grad());
  m.position_embedding = position_embedding.clone(position_embedding.requires_grad());
  const auto clone_ln = [](LayerNormParams& p) {
    p.gamma = p.gamma.clone(p.gamma.requires_grad());
    p.beta = p.beta.clone(p.beta.requires_grad());
  };
  const auto clone_attn = [](AttentionParams& p) {
    for (Tensor* t : {&p.wq, &p.wk, &p.wv, &p.wo}) *t = t->clone(t->requires_grad());
  };
  const auto clone_ffn = [](FfnParams& p) {
    for (Tensor* t : {&p.w_in, &p.b_in, &p.w_out, &p.b_out}) *t = t->clone(t->requires_grad());
  };
  for (auto& layer : m.encoder) {
    clone_ln(layer.ln_attn);
    clone_attn(layer.attn);
    clone_ln(layer.ln_ffn);
    clone_ffn(layer.ffn);
  }
  clone_ln(m.encoder_final_ln);
  for (auto& layer : m.decoder) {
    clone_ln(layer.ln_self);
    clone_attn(layer.self_attn);
    clone_ln(layer.ln_cross);
    clone_attn(layer.cross_attn);
    clone_ln(layer.ln_ffn);
    clone_ffn(layer.ffn);
  }
  clone_ln(m.decoder_final_ln);
  m.lm_head = lm_head.clone(lm_head.requires_grad());
  return m;
}

std::vector<NamedTensor> Transformer::parameters() const {
  std::vector<NamedTensor> out;
  out.push_back({"embed.token", token_embedding});
  out.push_back({"embed.position", position_embedding});
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    const std::string p = "enc." + std::to_string(i);
    push_ln(out, p + ".ln_attn", encoder[i].ln_attn);
    push_attention(out, p + ".attn", encoder[i].attn);
    push_ln(out, p + ".ln_ffn", encoder[i].ln_ffn);
    push_ffn(out, p + ".ffn", encoder[i].ffn);
  }
  push_ln(out, "enc.final_ln", encoder_final_ln);
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    const std::string p = "dec." + std::to_string(i);
    push_ln(out, p + ".ln_self", decoder[i].ln_self);
    push_attention(out, p + ".self_attn", decoder[i].self_attn);
    push_ln(out, p + ".ln_cross", decoder[i].ln_cross);
    push_attention(out, p + ".cross_attn", decoder[i].cross_attn);
    push_ln(out, p + ".ln_ffn", decoder[i].ln_ffn);
    push_ffn(out, p + ".ffn", decoder[i].ffn);
  }
  push_ln(out, "dec.final_ln", decoder_final_ln);
  out.push_back({"lm_head", lm_head});
  return out;
}

std::vector<NamedTensor> Transformer::layer_norm_parameters() const {
  std::vector<NamedTensor> out;
  for (auto& p : parameters()) {
    const auto& n = p.name;
    if (n.ends_with(".gamma") || n.ends_with(".beta")) out.push_back(p);
  }
  return out;
}

void Transformer::set_requires_grad(bool value) const {
  for (auto& p : parameters()) p.tensor.set_requires_grad(value);
}

Tensor Transformer::embed(std::span<const int> ids) const {
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw std::out_of_range("embed: token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(config_.vocab_size));
    }
  }
  if (ids.empty()) return Tensor::zeros({0, config_.d_model});
  return ad::gather_rows(token_embedding, ids);
}

Tensor Transformer::ffn_block(BlockKind kind, std::size_t layer, const FfnParams& ffn, const Tensor& h,
                              LayerPlugins* plugins, ActivationRecord& acts) const {
  LayerActivation rec;
  rec.kind = kind;
  rec.index = layer;
  rec.ffn_input = h;
  rec.ffn_origin = ffn_forward(ffn, h);
  acts.layers.push_back(rec);
  if (!plugins) return rec.ffn_origin;
  const std::size_t global = kind == BlockKind::encoder ? layer : config_.n_layers_enc + layer;
  FfnSite site{kind, layer, global, rec.ffn_input, rec.ffn_origin, acts};
  return plugins->ffn_block(site);
}

Tensor Transformer::encode(const TokenBatch& batch, const Tensor& prompt, LayerPlugins* plugins,
                           ActivationRecord& acts) const {
  const std::size_t d = config_.d_model;
  const std::size_t m = prompt.defined() ? prompt.rows() : 0;
  if (prompt.defined() && (prompt.rank() != 2 || prompt.cols() != d)) {
    throw ad::DimensionError("prompt " + ad::shape_to_string(prompt.shape()) + " does not have d=" + std::to_string(d));
  }
  const std::size_t n = m + batch.input_ids.size();
  if (n > config_.max_len) {
    throw std::length_error("encoder sequence of " + std::to_string(n) + " (prompt " + std::to_string(m) +
                            ") exceeds max_len " + std::to_string(config_.max_len));
  }
  if (n == 0) throw std::length_error("encoder sequence is empty");
  acts.prompt_len = m;

  // Positions count from the first input token; prompt rows carry none.
  const std::size_t l = batch.input_ids.size();
  Tensor x;
  if (l > 0) x = ad::add(embed(batch.input_ids), ad::slice_rows(position_embedding, 0, l));
  if (m > 0) {
    const std::vector<Tensor> parts{prompt, x};
    x = l == 0 ? prompt : ad::concat_rows(parts);
  }
  const Tensor mask = key_padding_mask(n, encoder_key_mask(batch, m));

  for (std::size_t i = 0; i < encoder.size(); ++i) {
    const auto& layer = encoder[i];
    const Tensor a = ln(x, layer.ln_attn, config_.ln_eps);
    x = ad::add(x, multi_head_attention(a, a, layer.attn, config_.n_heads, mask));
    const Tensor h = ln(x, layer.ln_ffn, config_.ln_eps);
    x = ad::add(x, ffn_block(BlockKind::encoder, i, layer.ffn, h, plugins, acts));
    acts.layers.back().layer_output = x;
  }
  acts.encoder_final = ln(x, encoder_final_ln, config_.ln_eps);
  return acts.encoder_final;
}

Tensor Transformer::decode(std::span<const int> decoder_ids, const Tensor& encoder_final,
                           const std::vector<std::uint8_t>& key_mask, LayerPlugins* plugins,
                           ActivationRecord& acts) const {
  const std::size_t t = decoder_ids.size();
  if (t == 0) throw std::length_error("decoder input is empty");
  if (t > config_.max_len) {
    throw std::length_error("decoder sequence of " + std::to_string(t) + " exceeds max_len " +
                            std::to_string(config_.max_len));
  }
  Tensor y = ad::add(embed(decoder_ids), ad::slice_rows(position_embedding, 0, t));
  const Tensor self_mask = causal_mask(t);
  const Tensor cross_mask = key_mask.empty() ? Tensor() : key_padding_mask(t, key_mask);
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    const auto& layer = decoder[i];
    const Tensor a = ln(y, layer.ln_self, config_.ln_eps);
    y = ad::add(y, multi_head_attention(a, a, layer.self_attn, config_.n_heads, self_mask));
    const Tensor c = ln(y, layer.ln_cross, config_.ln_eps);
    y = ad::add(y, multi_head_attention(c, encoder_final, layer.cross_attn, config_.n_heads, cross_mask));
    const Tensor h = ln(y, layer.ln_ffn, config_.ln_eps);
    y = ad::add(y, ffn_block(BlockKind::decoder, i, layer.ffn, h, plugins, acts));
    acts.layers.back().layer_output = y;
  }
  return ad::matmul(ln(y, decoder_final_ln, config_.ln_eps), lm_head);
}

std::vector<int> decoder_inputs(std::span<const int> target_ids) {
  std::vector<int> ids;
  ids.reserve(target_ids.size());
  ids.push_back(tasks::kBosId);
  if (!target_ids.empty()) ids.insert(ids.end(), target_ids.begin(), target_ids.end() - 1);
  return ids;
}

ForwardResult Transformer::seq2seq_forward(const TokenBatch& batch, const Tensor& prompt, LayerPlugins* plugins) const {
  ForwardResult r;
  const Tensor enc = encode(batch, prompt, plugins, r.acts);
  const auto dec_ids = decoder_inputs(batch.target_ids);
  r.logits = decode(dec_ids, enc, encoder_key_mask(batch, r.acts.prompt_len), plugins, r.acts);
  return r;
}

std::vector<int> Transformer::greedy_decode(const TokenBatch& batch, const Tensor& prompt, LayerPlugins* plugins,
                                            std::size_t max_new_tokens) const {
  ad::NoGradGuard no_grad;
  ActivationRecord enc_acts;
  const Tensor enc = encode(batch, prompt, plugins, enc_acts);
  const auto key_mask = encoder_key_mask(batch, enc_acts.prompt_len);
  std::vector<int> ids{tasks::kBosId};
  std::vector<int> out;
  for (std::size_t step = 0; step < max_new_tokens && ids.size() < config_.max_len; ++step) {
    ActivationRecord acts = enc_acts;
    const Tensor logits = decode(ids, enc, key_mask, plugins, acts);
    const std::size_t v = logits.cols();
    const auto last = logits.data().subspan((logits.rows() - 1) * v, v);
    const int next = static_cast<int>(std::max_element(last.begin(), last.end()) - last.begin());
    if (next == tasks::kEosId) break;
    out.push_back(next);
    ids.push_back(next);
  }
  return out;
}

}  // namespace mome::backbone
