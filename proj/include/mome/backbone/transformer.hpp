// SPDX-License-Identifier: Apache-2.0
//
// Tiny pre-LayerNorm encoder-decoder transformer. Serves as the frozen
// pretrained model: prompts are prepended to the encoder input and every FFN
// block can be replaced through LayerPlugins.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mome/autodiff/tensor.hpp"

namespace mome::backbone {

using ad::Tensor;

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_layers_enc = 2;
  std::size_t n_layers_dec = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t vocab_size = 64;
  std::size_t max_len = 64;
  double ln_eps = 1e-6;

  std::size_t n_layers() const { return n_layers_enc + n_layers_dec; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class BlockKind { encoder, decoder };
std::string to_string(BlockKind kind);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
};

struct AttentionParams {
  Tensor wq, wk, wv, wo;
};

struct FfnParams {
  Tensor w_in;   // d × d_ff
  Tensor b_in;   // d_ff
  Tensor w_out;  // d_ff × d
  Tensor b_out;  // d
};

struct EncoderLayer {
  LayerNormParams ln_attn;
  AttentionParams attn;
  LayerNormParams ln_ffn;
  FfnParams ffn;
};

struct DecoderLayer {
  LayerNormParams ln_self;
  AttentionParams self_attn;
  LayerNormParams ln_cross;
  AttentionParams cross_attn;
  LayerNormParams ln_ffn;
  FfnParams ffn;
};

// One example: encoder ids and decoder targets. The decoder consumes
// BOS + target_ids[0..n-1) and predicts target_ids.
struct TokenBatch {
  std::vector<int> input_ids;
  std::vector<int> target_ids;
  // 1 for real tokens, 0 for padding; empty means all real.
  std::vector<std::uint8_t> attention_mask;
};

struct LayerActivation {
  BlockKind kind = BlockKind::encoder;
  std::size_t index = 0;  // within its stack
  Tensor ffn_input;       // H_i fed to the FFN and to experts
  Tensor ffn_origin;      // FFN output H_origin
  Tensor layer_output;    // H_l, the residual stream after the layer
};

struct ActivationRecord {
  // Encoder layers first, then decoder layers.
  std::vector<LayerActivation> layers;
  Tensor encoder_final;
  std::size_t prompt_len = 0;
};

// What a plugin sees when asked for an FFN block's output.
struct FfnSite {
  BlockKind kind;
  std::size_t layer;        // within its stack
  std::size_t global_layer; // encoder layers first
  const Tensor& ffn_input;
  const Tensor& ffn_origin;
  const ActivationRecord& acts;
};

class LayerPlugins {
 public:
  virtual ~LayerPlugins() = default;
  // Replacement for the FFN block output (the vanilla answer is ffn_origin).
  virtual Tensor ffn_block(const FfnSite& site) = 0;
};

struct ForwardResult {
  Tensor logits;  // [target_len × vocab]
  ActivationRecord acts;
};

Tensor ffn_forward(const FfnParams& ffn, const Tensor& h);
// Pre-activation half of the FFN, h·W_in + b_in.
Tensor ffn_preactivation(const FfnParams& ffn, const Tensor& h);

// Multi-head scaled dot-product attention. `mask` is additive, [q_len × k_len],
// or undefined for none.
Tensor multi_head_attention(const Tensor& query_in, const Tensor& kv_in, const AttentionParams& params,
                            std::size_t n_heads, const Tensor& mask);

Tensor causal_mask(std::size_t n);

class Transformer {
 public:
  Transformer() = default;
  static Transformer init(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  // Deep copy; the copy shares no storage with this model.
  Transformer clone() const;

  std::vector<NamedTensor> parameters() const;
  std::vector<NamedTensor> layer_norm_parameters() const;
  void set_requires_grad(bool value) const;

  Tensor embed(std::span<const int> ids) const;

  // Encoder pass over [prompt; embed(input_ids)].
  Tensor encode(const TokenBatch& batch, const Tensor& prompt, LayerPlugins* plugins, ActivationRecord& acts) const;
  // Decoder logits for the given decoder input ids.
  Tensor decode(std::span<const int> decoder_ids, const Tensor& encoder_final, const std::vector<std::uint8_t>& key_mask,
                LayerPlugins* plugins, ActivationRecord& acts) const;

  ForwardResult seq2seq_forward(const TokenBatch& batch, const Tensor& prompt, LayerPlugins* plugins) const;

  // Greedy decoding until EOS or `max_new_tokens`; returned ids exclude EOS.
  std::vector<int> greedy_decode(const TokenBatch& batch, const Tensor& prompt, LayerPlugins* plugins,
                                 std::size_t max_new_tokens) const;

  Tensor token_embedding;     // vocab × d
  Tensor position_embedding;  // max_len × d
  std::vector<EncoderLayer> encoder;
  LayerNormParams encoder_final_ln;
  std::vector<DecoderLayer> decoder;
  LayerNormParams decoder_final_ln;
  Tensor lm_head;  // d × vocab

 private:
  Tensor ffn_block(BlockKind kind, std::size_t layer, const FfnParams& ffn, const Tensor& h, LayerPlugins* plugins,
                   ActivationRecord& acts) const;

  ModelConfig config_;
};

std::vector<int> decoder_inputs(std::span<const int> target_ids);

}  // namespace mome::backbone
