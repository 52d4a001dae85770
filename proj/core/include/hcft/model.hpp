#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hcft/nn.hpp"

namespace hcft {

enum class NormKind { DyT, LN };

// Geometry, capacity, and ablation switches of the network. Every field is
// serialized into the canonical config text embedded in checkpoints.
struct ModelConfig {
  std::size_t in_channels = 3;
  std::size_t in_length = 500;
  std::size_t n_classes = 2;
  std::size_t embed_dim = 32;
  std::size_t n_heads = 2;
  std::array<std::size_t, 4> stage_depths{1, 1, 4, 1};
  std::size_t filters = 0; // intermediate 2D feature maps; 0 = match embed_dim
  std::size_t ffn_expansion = 2;
  NormKind norm = NormKind::DyT;
  double dropout = 0.0;
  bool self_attn = true;
  bool cross_attn = true;
  bool stage_concat = true;
  bool final_mha = true;

  std::size_t filters_resolved() const { return filters ? filters : embed_dim; }
  void validate() const; // HeadDivisibility / BadConfig / ConfigIncompatible
  bool operator==(const ModelConfig&) const = default;
};

// Canonical flat "model.key=value" lines, sorted by key; the parse rejects
// unknown keys, duplicates, and malformed values with BadConfig.
std::string to_config_text(const ModelConfig& cfg);
ModelConfig config_from_text(const std::string& text);

// Pooling geometry shared by the model and its shape tests.
inline constexpr std::size_t kStagePoolKernel[4] = {10, 10, 10, 4};
inline constexpr std::size_t kStagePoolStride = 2;
inline constexpr std::size_t kLongPoolKernel = 75;
inline constexpr std::size_t kLongPoolStride = 15;

// floor((len - k) / s) + 1; BadConfig when k == 0 or s == 0, KernelTooLarge
// when k > len.
std::size_t pooled_len(std::size_t len, std::size_t k, std::size_t s);

// Average pooling over the token axis of (B, P, D) with the fixed kernel of
// stage `stage_index` (1-based). Strict contract: KernelTooLarge when the
// sequence is shorter than the kernel. The network's forward pass instead
// clamps kernels to the sequence so shallow geometries stay viable.
Tensor64 stage_pool(const Tensor64& tokens, std::size_t stage_index);

// Per-stage token counts inside the blocks and after each stage's pooling
// (clamped exactly as forward does), plus fused/pooled head lengths.
struct TokenChain {
  std::vector<std::size_t> block_tokens;  // tokens entering each stage's blocks
  std::vector<std::size_t> stage_tokens;  // tokens leaving each stage's pooling
  std::size_t concat_tokens = 0;          // fused length (0 when concat is off)
  std::size_t head_tokens = 0;            // sequence the head path consumes
};
TokenChain token_chain(const ModelConfig& cfg);

// gamma(d) * tanh(alpha * x) + beta(d): a bounded, learnable, statistics-free
// normalization stand-in. alpha is a single scalar shared by all features.
struct DyTState {
  Tensor64 alpha, gamma, beta;

  DyTState() = default;
  explicit DyTState(std::size_t dim);
  void named_tensors(NamedTensors<double>& out, const std::string& prefix);
};
Tensor64 dyt(const Tensor64& x, const DyTState& s);

// One of the three per-block normalizations, switchable DyT <-> LayerNorm.
struct NormState {
  NormKind kind = NormKind::DyT;
  DyTState dy;
  Tensor64 gamma, beta; // LayerNorm affine

  NormState() = default;
  NormState(NormKind kind, std::size_t dim);
  Tensor64 forward(const Tensor64& x) const;
  void named_tensors(NamedTensors<double>& out, const std::string& prefix);
};

// Depthwise(k=15, same) -> BN -> GELU -> pointwise(to D) -> BN -> GELU over
// (B, C, L); emits tokens (B, L, D). Never mixes channels before the
// pointwise step.
struct TemporalBranch {
  Conv1d<double> dw, pw;
  BatchNorm<double> bn1, bn2;

  TemporalBranch() = default;
  TemporalBranch(std::size_t in_ch, std::size_t embed, std::mt19937_64& rng);
  Tensor64 forward(const Tensor64& x, Mode mode);
  void named_tensors(NamedTensors<double>& out, const std::string& prefix);
};

// (B, C, L) viewed as a one-map image (B, 1, C, L): temporal conv (1,15)
// same-padded to F maps, depthwise spatial (C,1) collapsing height to 1,
// pointwise to D; each conv is followed by BN + GELU; emits (B, L, D).
struct SpatioTemporalBranch {
  Conv2d<double> conv_t, conv_s, conv_p;
  BatchNorm<double> bn1, bn2, bn3;

  SpatioTemporalBranch() = default;
  SpatioTemporalBranch(std::size_t in_ch, std::size_t filters, std::size_t embed,
                       std::mt19937_64& rng);
  Tensor64 forward(const Tensor64& x, Mode mode);
  void named_tensors(NamedTensors<double>& out, const std::string& prefix);
};

// The fused unit: dual-branch extraction, self-attention, cross-attention
// conditioned on the temporal branch, and an FFN, with per-block positional
// bias and three switchable norms. Input is channels-first (B, C_in, L);
// the first block of the network reads raw EEG, deeper blocks read token
// sequences transposed to (B, D, P).
struct CftBlock {
  TemporalBranch temporal;
  SpatioTemporalBranch spatial;
  Tensor64 pos; // (P, 1) additive per-position bias, zeros init
  NormState norm_self, norm_cross, norm_ffn;
  MultiHeadAttention<double> attn_self, attn_cross; // allocated per switches
  Linear<double> ffn_in, ffn_out;

  CftBlock() = default;
  CftBlock(const ModelConfig& cfg, std::size_t in_ch, std::size_t tokens,
           std::mt19937_64& rng);
  Tensor64 forward(const Tensor64& x, const ModelConfig& cfg, FwdCtx<double>& ctx,
                   const std::string& tag);
  void named_tensors(NamedTensors<double>& out, const std::string& prefix);
};

// A post-softmax self-attention map lifted from one block: averaged over
// heads and scaled to [0, 1] by its maximum.
struct AttentionMap {
  std::size_t stage = 0, block = 0; // 1-based; 0/0 marks the head-path MHSA
  std::size_t rows = 0, cols = 0;   // query x key tokens
  std::vector<double> values;
};
std::string attention_csv(const AttentionMap& map);

class Hcft {
public:
  Hcft() = default;
  Hcft(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const TokenChain& chain() const { return chain_; }

  // x is (B, in_channels, in_length); returns logits (B, n_classes).
  // GeometryMismatch when x disagrees with the configured geometry.
  Tensor64 forward(const Tensor64& x, FwdCtx<double>& ctx);
  Tensor64 forward_eval(const Tensor64& x); // frozen-statistics convenience

  // Head-averaged, max-normalized self-attention maps of every block (plus
  // the head-path MHSA when enabled), in forward order; eval mode.
  std::vector<AttentionMap> export_attention(const Tensor64& x);

  // Parameters and persistent buffers, stable names, forward order.
  NamedTensors<double> named_tensors();
  std::size_t param_count(); // trainable scalars only

private:
  ModelConfig cfg_;
  TokenChain chain_;
  std::vector<std::vector<CftBlock>> stages_;
  std::vector<Linear<double>> down_proj_;   // pointwise after each stage pool
  std::vector<Linear<double>> fusion_proj_; // per-stage, only when concat on
  MultiHeadAttention<double> final_attn_;
  NormState final_norm_;
  Linear<double> head_;
};

// Total plus per-submodule breakdown for a config, without training anything.
struct ParamCountReport {
  std::size_t total = 0;
  std::vector<std::pair<std::string, std::size_t>> items;
  std::string pretty() const;
};
ParamCountReport param_report(const ModelConfig& cfg);
std::size_t param_count(const ModelConfig& cfg);

// Checkpoint: "HCFT", u32 format version, u32-length-prefixed canonical
// config text, u32 tensor count, then per tensor: u16 name length, name,
// u8 rank, u32 extents, f32 little-endian values. Buffers (running
// statistics) are stored alongside parameters.
std::vector<std::uint8_t> checkpoint_bytes(Hcft& model);
Hcft parse_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(Hcft& model, const std::string& path);
Hcft load_checkpoint(const std::string& path); // MissingCheckpoint if absent

} // namespace hcft
