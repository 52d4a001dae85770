#include "hcft/model.hpp"

#include "hcft/signal_io.hpp" // file byte helpers for checkpoints

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <sstream>

namespace hcft {

// ---------------------------------------------------------------- config --

void ModelConfig::validate() const {
  if (in_channels < 1) raise(Err::BadConfig, "model needs at least one input channel");
  if (n_classes < 2) raise(Err::BadConfig, "model needs at least two classes");
  if (embed_dim < 1 || n_heads < 1) raise(Err::BadConfig, "embed_dim and n_heads must be positive");
  if (embed_dim % n_heads != 0)
    raise(Err::HeadDivisibility, "embed_dim " + std::to_string(embed_dim) +
                                     " not divisible by " + std::to_string(n_heads) + " heads");
  if (ffn_expansion < 1) raise(Err::BadConfig, "ffn_expansion must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) raise(Err::BadConfig, "dropout must lie in [0, 1)");
  bool any = false;
  for (std::size_t d : stage_depths) any = any || d > 0;
  if (!any) raise(Err::BadConfig, "at least one stage needs a nonzero depth");
  if (in_length < 15)
    raise(Err::ConfigIncompatible, "input length " + std::to_string(in_length) +
                                       " is shorter than the 15-sample extraction kernels");
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t parse_size(const std::string& s, const std::string& key) {
  if (s.empty() || s.size() > 12 || s.find_first_not_of("0123456789") != std::string::npos)
    raise(Err::BadConfig, "value '" + s + "' for " + key + " is not a non-negative integer");
  return std::stoull(s);
}

double parse_double(const std::string& s, const std::string& key) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size())
    raise(Err::BadConfig, "value '" + s + "' for " + key + " is not a number");
  return v;
}

bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  raise(Err::BadConfig, "value '" + s + "' for " + key + " is not a boolean");
}

} // namespace

std::string to_config_text(const ModelConfig& cfg) {
  std::ostringstream out;
  out << "model.cross_attn=" << (cfg.cross_attn ? 1 : 0) << "\n";
  out << "model.depths=" << cfg.stage_depths[0] << "," << cfg.stage_depths[1] << ","
      << cfg.stage_depths[2] << "," << cfg.stage_depths[3] << "\n";
  out << "model.dropout=" << fmt_double(cfg.dropout) << "\n";
  out << "model.embed_dim=" << cfg.embed_dim << "\n";
  out << "model.ffn_expansion=" << cfg.ffn_expansion << "\n";
  out << "model.filters=" << cfg.filters_resolved() << "\n";
  out << "model.final_mha=" << (cfg.final_mha ? 1 : 0) << "\n";
  out << "model.in_channels=" << cfg.in_channels << "\n";
  out << "model.in_length=" << cfg.in_length << "\n";
  out << "model.n_classes=" << cfg.n_classes << "\n";
  out << "model.n_heads=" << cfg.n_heads << "\n";
  out << "model.norm=" << (cfg.norm == NormKind::DyT ? "dyt" : "ln") << "\n";
  out << "model.self_attn=" << (cfg.self_attn ? 1 : 0) << "\n";
  out << "model.stage_concat=" << (cfg.stage_concat ? 1 : 0) << "\n";
  return out.str();
}

ModelConfig config_from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) raise(Err::BadConfig, "config line without '=': " + line);
    const std::string key = line.substr(0, eq);
    if (!kv.emplace(key, line.substr(eq + 1)).second)
      raise(Err::BadConfig, "duplicate config key " + key);
  }

  ModelConfig cfg;
  auto take = [&](const char* key) {
    const auto it = kv.find(key);
    if (it == kv.end()) raise(Err::BadConfig, std::string("missing config key ") + key);
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  cfg.cross_attn = parse_bool(take("model.cross_attn"), "model.cross_attn");
  {
    std::string v = take("model.depths");
    std::replace(v.begin(), v.end(), ',', ' ');
    std::istringstream ds(v);
    std::string part;
    std::size_t i = 0;
    while (ds >> part) {
      if (i >= 4) raise(Err::BadConfig, "model.depths takes exactly four values");
      cfg.stage_depths[i++] = parse_size(part, "model.depths");
    }
    if (i != 4) raise(Err::BadConfig, "model.depths takes exactly four values");
  }
  cfg.dropout = parse_double(take("model.dropout"), "model.dropout");
  cfg.embed_dim = parse_size(take("model.embed_dim"), "model.embed_dim");
  cfg.ffn_expansion = parse_size(take("model.ffn_expansion"), "model.ffn_expansion");
  cfg.filters = parse_size(take("model.filters"), "model.filters");
  cfg.final_mha = parse_bool(take("model.final_mha"), "model.final_mha");
  cfg.in_channels = parse_size(take("model.in_channels"), "model.in_channels");
  cfg.in_length = parse_size(take("model.in_length"), "model.in_length");
  cfg.n_classes = parse_size(take("model.n_classes"), "model.n_classes");
  cfg.n_heads = parse_size(take("model.n_heads"), "model.n_heads");
  {
    const std::string v = take("model.norm");
    if (v == "dyt") cfg.norm = NormKind::DyT;
    else if (v == "ln") cfg.norm = NormKind::LN;
    else raise(Err::BadConfig, "model.norm must be 'dyt' or 'ln', got '" + v + "'");
  }
  cfg.self_attn = parse_bool(take("model.self_attn"), "model.self_attn");
  cfg.stage_concat = parse_bool(take("model.stage_concat"), "model.stage_concat");
  if (!kv.empty()) raise(Err::BadConfig, "unknown config key " + kv.begin()->first);
  cfg.validate();
  return cfg;
}

// -------------------------------------------------------------- geometry --

std::size_t pooled_len(std::size_t len, std::size_t k, std::size_t s) {
  if (k == 0 || s == 0) raise(Err::BadConfig, "pooling kernel and stride must be positive");
  if (k > len)
    raise(Err::KernelTooLarge, "pooling kernel " + std::to_string(k) + " exceeds length " +
                                   std::to_string(len));
  return (len - k) / s + 1;
}

namespace {

// Token-axis pooling for (B, P, D), clamping the kernel to the sequence so
// the output always keeps at least one token.
Tensor64 pool_tokens_clamped(const Tensor64& t, std::size_t k, std::size_t s) {
  const std::size_t ke = std::min(k, t.dim(1));
  return transpose_last2(avg_pool_last(transpose_last2(t), ke, s));
}

// Mean over the token axis: (B, P, D) -> (B, D).
Tensor64 global_avg_pool(const Tensor64& t) {
  const std::size_t B = t.dim(0), P = t.dim(1), D = t.dim(2);
  Tensor64 w = Tensor64::create({P, 1}, std::vector<double>(P, 1.0 / double(P)));
  return reshape(matmul(transpose_last2(t), w), {B, D});
}

} // namespace

Tensor64 stage_pool(const Tensor64& tokens, std::size_t stage_index) {
  if (tokens.rank() != 3)
    raise(Err::ShapeMismatch, "stage pooling expects (B,P,D), got " + shape_str(tokens.shape()));
  if (stage_index < 1 || stage_index > 4)
    raise(Err::BadConfig, "stage index must be 1..4, got " + std::to_string(stage_index));
  return transpose_last2(avg_pool_last(transpose_last2(tokens),
                                       kStagePoolKernel[stage_index - 1], kStagePoolStride));
}

TokenChain token_chain(const ModelConfig& cfg) {
  cfg.validate();
  TokenChain ch;
  ch.block_tokens.assign(4, 0);
  ch.stage_tokens.assign(4, 0);
  std::size_t cur = cfg.in_length;
  bool embedded = false;
  std::size_t last_active = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    if (!embedded && cfg.stage_depths[i] == 0) continue; // no tokens exist yet
    embedded = true;
    ch.block_tokens[i] = cur;
    const std::size_t ke = std::min(kStagePoolKernel[i], cur);
    cur = (cur - ke) / kStagePoolStride + 1;
    ch.stage_tokens[i] = cur;
    last_active = i;
  }
  if (cfg.stage_concat) {
    for (std::size_t i = 0; i < 4; ++i) ch.concat_tokens += ch.stage_tokens[i];
    const std::size_t ke = std::min(kLongPoolKernel, ch.concat_tokens);
    ch.head_tokens = (ch.concat_tokens - ke) / kLongPoolStride + 1;
  } else {
    ch.head_tokens = ch.stage_tokens[last_active];
  }
  return ch;
}

// ------------------------------------------------------------------ norm --

DyTState::DyTState(std::size_t dim) {
  alpha = Tensor64::full({1}, 0.5).set_requires_grad(true);
  gamma = Tensor64::full({dim}, 1.0).set_requires_grad(true);
  beta = Tensor64::zeros({dim}).set_requires_grad(true);
}

void DyTState::named_tensors(NamedTensors<double>& out, const std::string& prefix) {
  out.emplace_back(prefix + ".alpha", alpha);
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

Tensor64 dyt(const Tensor64& x, const DyTState& s) {
  return add(mul(tanh(mul(x, s.alpha)), s.gamma), s.beta);
}

NormState::NormState(NormKind kind_, std::size_t dim) : kind(kind_) {
  if (kind == NormKind::DyT) {
    dy = DyTState(dim);
  } else {
    gamma = Tensor64::full({dim}, 1.0).set_requires_grad(true);
    beta = Tensor64::zeros({dim}).set_requires_grad(true);
  }
}

Tensor64 NormState::forward(const Tensor64& x) const {
  return kind == NormKind::DyT ? dyt(x, dy) : layer_norm(x, gamma, beta);
}

void NormState::named_tensors(NamedTensors<double>& out, const std::string& prefix) {
  if (kind == NormKind::DyT) {
    dy.named_tensors(out, prefix);
  } else {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
}

// -------------------------------------------------------------- branches --

TemporalBranch::TemporalBranch(std::size_t in_ch, std::size_t embed, std::mt19937_64& rng)
    : dw(in_ch, in_ch, 15, 1, Pad::Same, in_ch, false, rng),
      pw(in_ch, embed, 1, 1, Pad::Valid, 1, false, rng), bn1(in_ch), bn2(embed) {}

Tensor64 TemporalBranch::forward(const Tensor64& x, Mode mode) {
  Tensor64 y = gelu(bn1.forward(dw.forward(x), mode));
  y = gelu(bn2.forward(pw.forward(y), mode));
  return transpose_last2(y); // (B, D, L) -> (B, L, D)
}

void TemporalBranch::named_tensors(NamedTensors<double>& out, const std::string& prefix) {
  dw.named_tensors(out, prefix + ".dw");
  bn1.named_tensors(out, prefix + ".bn1");
  pw.named_tensors(out, prefix + ".pw");
  bn2.named_tensors(out, prefix + ".bn2");
}

SpatioTemporalBranch::SpatioTemporalBranch(std::size_t in_ch, std::size_t filters,
                                           std::size_t embed, std::mt19937_64& rng)
    : conv_t(1, filters, 1, 15, 1, 1, Pad::Valid, Pad::Same, 1, false, rng),
      conv_s(filters, filters, in_ch, 1, 1, 1, Pad::Valid, Pad::Valid, filters, false, rng),
      conv_p(filters, embed, 1, 1, 1, 1, Pad::Valid, Pad::Valid, 1, false, rng),
      bn1(filters), bn2(filters), bn3(embed) {}

Tensor64 SpatioTemporalBranch::forward(const Tensor64& x, Mode mode) {
  const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
  Tensor64 y = reshape(x, {B, 1, C, L});
  y = gelu(bn1.forward(conv_t.forward(y), mode)); // (B, F, C, L)
  y = gelu(bn2.forward(conv_s.forward(y), mode)); // (B, F, 1, L)
  y = gelu(bn3.forward(conv_p.forward(y), mode)); // (B, D, 1, L)
  return transpose_last2(reshape(y, {B, y.dim(1), L}));
}

void SpatioTemporalBranch::named_tensors(NamedTensors<double>& out, const std::string& prefix) {
  conv_t.named_tensors(out, prefix + ".conv_t");
  bn1.named_tensors(out, prefix + ".bn1");
  conv_s.named_tensors(out, prefix + ".conv_s");
  bn2.named_tensors(out, prefix + ".bn2");
  conv_p.named_tensors(out, prefix + ".conv_p");
  bn3.named_tensors(out, prefix + ".bn3");
}

// ------------------------------------------------------------- CFT block --

CftBlock::CftBlock(const ModelConfig& cfg, std::size_t in_ch, std::size_t tokens,
                   std::mt19937_64& rng)
    : temporal(in_ch, cfg.embed_dim, rng),
      spatial(in_ch, cfg.filters_resolved(), cfg.embed_dim, rng) {
  pos = Tensor64::zeros({tokens, 1}).set_requires_grad(true);
  if (cfg.self_attn) {
    norm_self = NormState(cfg.norm, cfg.embed_dim);
    attn_self = MultiHeadAttention<double>(cfg.embed_dim, cfg.n_heads, rng);
  }
  if (cfg.cross_attn) {
    norm_cross = NormState(cfg.norm, cfg.embed_dim);
    attn_cross = MultiHeadAttention<double>(cfg.embed_dim, cfg.n_heads, rng);
  }
  norm_ffn = NormState(cfg.norm, cfg.embed_dim);
  ffn_in = Linear<double>(cfg.embed_dim, cfg.ffn_expansion * cfg.embed_dim, true, rng);
  ffn_out = Linear<double>(cfg.ffn_expansion * cfg.embed_dim, cfg.embed_dim, true, rng);
}

Tensor64 CftBlock::forward(const Tensor64& x, const ModelConfig& cfg, FwdCtx<double>& ctx,
                           const std::string& tag) {
  Tensor64 z_cond = temporal.forward(x, ctx.mode);
  Tensor64 z_main = positional_encoding_add(spatial.forward(x, ctx.mode), pos);

  Tensor64 z1 = z_main;
  if (cfg.self_attn) {
    ctx.attn_tag = tag + ".self";
    Tensor64 normed = norm_self.forward(z_main);
    z1 = add(z_main, dropout(attn_self.forward(normed, normed, ctx), cfg.dropout, ctx));
  }
  Tensor64 z2 = z1;
  if (cfg.cross_attn) {
    ctx.attn_tag = tag + ".cross";
    Tensor64 a = attn_cross.forward(z_cond, norm_cross.forward(z1), ctx);
    z2 = add(z1, dropout(a, cfg.dropout, ctx));
  }
  Tensor64 h = ffn_in.forward(norm_ffn.forward(z2));
  h = ffn_out.forward(dropout(gelu(h), cfg.dropout, ctx));
  return add(add(h, z2), z_cond);
}

void CftBlock::named_tensors(NamedTensors<double>& out, const std::string& prefix) {
  temporal.named_tensors(out, prefix + ".temporal");
  spatial.named_tensors(out, prefix + ".spatial");
  out.emplace_back(prefix + ".pos", pos);
  if (attn_self.dim) {
    norm_self.named_tensors(out, prefix + ".norm_self");
    attn_self.named_tensors(out, prefix + ".self_attn");
  }
  if (attn_cross.dim) {
    norm_cross.named_tensors(out, prefix + ".norm_cross");
    attn_cross.named_tensors(out, prefix + ".cross_attn");
  }
  norm_ffn.named_tensors(out, prefix + ".norm_ffn");
  ffn_in.named_tensors(out, prefix + ".ffn_in");
  ffn_out.named_tensors(out, prefix + ".ffn_out");
}

// ----------------------------------------------------------------- model --

Hcft::Hcft(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  chain_ = token_chain(cfg_);
  std::mt19937_64 rng(seed);

  const std::size_t D = cfg_.embed_dim;
  stages_.resize(4);
  down_proj_.resize(4);
  fusion_proj_.resize(4);
  bool embedded = false;
  for (std::size_t i = 0; i < 4; ++i) {
    if (chain_.block_tokens[i] == 0) continue; // before the first block: raw EEG
    for (std::size_t b = 0; b < cfg_.stage_depths[i]; ++b) {
      const std::size_t in_ch = embedded ? D : cfg_.in_channels;
      stages_[i].emplace_back(cfg_, in_ch, chain_.block_tokens[i], rng);
      embedded = true;
    }
    embedded = true; // depth-0 stage after embedding still pools tokens
    down_proj_[i] = Linear<double>(D, D, true, rng);
    if (cfg_.stage_concat) fusion_proj_[i] = Linear<double>(D, D, true, rng);
  }
  if (cfg_.final_mha) final_attn_ = MultiHeadAttention<double>(D, cfg_.n_heads, rng);
  final_norm_ = NormState(cfg_.norm, D);
  head_ = Linear<double>(D, cfg_.n_classes, true, rng);
}

Tensor64 Hcft::forward(const Tensor64& x, FwdCtx<double>& ctx) {
  if (x.rank() != 3 || x.dim(1) != cfg_.in_channels || x.dim(2) != cfg_.in_length)
    raise(Err::GeometryMismatch, "input " + shape_str(x.shape()) + " does not match configured (" +
                                     std::to_string(cfg_.in_channels) + " channels, " +
                                     std::to_string(cfg_.in_length) + " samples)");

  Tensor64 tokens;
  bool embedded = false;
  std::vector<Tensor64> fused;
  Tensor64 last_stage;
  for (std::size_t i = 0; i < 4; ++i) {
    if (chain_.block_tokens[i] == 0) continue;
    for (std::size_t b = 0; b < stages_[i].size(); ++b) {
      Tensor64 in_cf = embedded ? transpose_last2(tokens) : x;
      tokens = stages_[i][b].forward(
          in_cf, cfg_, ctx, "s" + std::to_string(i + 1) + ".b" + std::to_string(b + 1));
      embedded = true;
    }
    tokens = pool_tokens_clamped(tokens, kStagePoolKernel[i], kStagePoolStride);
    tokens = down_proj_[i].forward(tokens);
    last_stage = tokens;
    if (cfg_.stage_concat) fused.push_back(fusion_proj_[i].forward(tokens));
  }

  Tensor64 z;
  if (cfg_.stage_concat) {
    z = fused.size() == 1 ? fused[0] : concat_axis1(fused);
    z = pool_tokens_clamped(z, kLongPoolKernel, kLongPoolStride);
  } else {
    z = last_stage;
  }
  if (cfg_.final_mha) {
    ctx.attn_tag = "final";
    z = final_attn_.forward(z, z, ctx);
  }
  z = final_norm_.forward(z);
  return head_.forward(global_avg_pool(z));
}

Tensor64 Hcft::forward_eval(const Tensor64& x) {
  FwdCtx<double> ctx;
  ctx.mode = Mode::Eval;
  return forward(x, ctx);
}

std::vector<AttentionMap> Hcft::export_attention(const Tensor64& x) {
  FwdCtx<double> ctx;
  ctx.mode = Mode::Eval;
  std::vector<AttnCapture<double>> sink;
  ctx.attn_sink = &sink;
  forward(x, ctx);

  std::vector<AttentionMap> maps;
  for (const auto& cap : sink) {
    if (cap.tag.size() >= 6 && cap.tag.substr(cap.tag.size() - 6) == ".cross") continue;
    AttentionMap m;
    if (cap.tag != "final") { // "s<i>.b<j>.self"
      std::size_t si = 0, bi = 0;
      if (std::sscanf(cap.tag.c_str(), "s%zu.b%zu", &si, &bi) != 2)
        raise(Err::BadConfig, "unrecognized attention tag " + cap.tag);
      m.stage = si;
      m.block = bi;
    }
    const std::size_t H = cap.shape[1], Pq = cap.shape[2], Pk = cap.shape[3];
    m.rows = Pq;
    m.cols = Pk;
    m.values.assign(Pq * Pk, 0.0);
    // first batch element, averaged over heads
    for (std::size_t h = 0; h < H; ++h) {
      const double* src = cap.weights.data() + h * Pq * Pk;
      for (std::size_t i = 0; i < Pq * Pk; ++i) m.values[i] += src[i] / double(H);
    }
    double peak = 0;
    for (double v : m.values) peak = std::max(peak, v);
    if (peak > 0)
      for (double& v : m.values) v /= peak;
    maps.push_back(std::move(m));
  }
  return maps;
}

std::string attention_csv(const AttentionMap& map) {
  std::ostringstream out;
  out << "stage=" << map.stage << ",block=" << map.block << ",rows=" << map.rows
      << ",cols=" << map.cols << "\n";
  for (std::size_t r = 0; r < map.rows; ++r) {
    for (std::size_t c = 0; c < map.cols; ++c) {
      if (c) out << ",";
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.9g", map.values[r * map.cols + c]);
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

NamedTensors<double> Hcft::named_tensors() {
  NamedTensors<double> out;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t b = 0; b < stages_[i].size(); ++b)
      stages_[i][b].named_tensors(out, "stage" + std::to_string(i + 1) + ".block" +
                                           std::to_string(b + 1));
    if (down_proj_[i].w.defined())
      down_proj_[i].named_tensors(out, "down" + std::to_string(i + 1));
    if (fusion_proj_[i].w.defined())
      fusion_proj_[i].named_tensors(out, "fuse" + std::to_string(i + 1));
  }
  if (final_attn_.dim) final_attn_.named_tensors(out, "final_attn");
  final_norm_.named_tensors(out, "final_norm");
  head_.named_tensors(out, "head");
  return out;
}

std::size_t Hcft::param_count() {
  std::size_t total = 0;
  for (auto& [name, t] : named_tensors())
    if (t.requires_grad()) total += t.size();
  return total;
}

ParamCountReport param_report(const ModelConfig& cfg) {
  Hcft model(cfg, 0);
  ParamCountReport rep;
  for (auto& [name, t] : model.named_tensors()) {
    if (!t.requires_grad()) continue;
    rep.total += t.size();
    // group by the first two dotted components (stage1.block1, down1, head)
    const std::size_t d1 = name.find('.');
    std::size_t cut = d1 == std::string::npos ? d1 : name.find('.', d1 + 1);
    if (cut == std::string::npos) cut = d1;
    const std::string group = cut == std::string::npos ? name : name.substr(0, cut);
    if (!rep.items.empty() && rep.items.back().first == group) {
      rep.items.back().second += t.size();
    } else {
      rep.items.emplace_back(group, t.size());
    }
  }
  return rep;
}

std::string ParamCountReport::pretty() const {
  std::ostringstream out;
  for (const auto& [name, count] : items) out << name << "\t" << count << "\n";
  out << "total\t" << total << "\n";
  return out.str();
}

std::size_t param_count(const ModelConfig& cfg) { return param_report(cfg).total; }

// ------------------------------------------------------------ checkpoint --

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

struct ByteWriter {
  std::vector<std::uint8_t> bytes;
  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes.push_back(std::uint8_t(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(std::uint8_t(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) { bytes.insert(bytes.end(), s.begin(), s.end()); }
};

struct ByteReader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t at = 0;
  void need(std::size_t n, const char* what) {
    if (at + n > bytes.size())
      raise(Err::BadCheckpoint, std::string("checkpoint ends inside ") + what + " (offset " +
                                    std::to_string(at) + ")");
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes[at++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= std::uint16_t(bytes[at++]) << (8 * i);
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[at++]) << (8 * i);
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(bytes.begin() + std::ptrdiff_t(at), bytes.begin() + std::ptrdiff_t(at + n));
    at += n;
    return s;
  }
};

} // namespace

std::vector<std::uint8_t> checkpoint_bytes(Hcft& model) {
  ByteWriter w;
  w.str("HCFT");
  w.u32(kCheckpointVersion);
  const std::string cfg = to_config_text(model.config());
  w.u32(std::uint32_t(cfg.size()));
  w.str(cfg);

  NamedTensors<double> tensors = model.named_tensors();
  w.u32(std::uint32_t(tensors.size()));
  for (auto& [name, t] : tensors) {
    w.u16(std::uint16_t(name.size()));
    w.str(name);
    w.u8(std::uint8_t(t.rank()));
    for (std::size_t i = 0; i < t.rank(); ++i) w.u32(std::uint32_t(t.dim(i)));
    for (double v : t.values()) w.f32(float(v));
  }
  return w.bytes;
}

Hcft parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r{bytes};
  if (r.str(std::min<std::size_t>(4, bytes.size()), "magic") != "HCFT")
    raise(Err::BadMagic, "not a model checkpoint (missing HCFT magic)");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    raise(Err::BadCheckpoint, "unsupported checkpoint version " + std::to_string(version));

  const std::uint32_t cfg_len = r.u32("config length");
  const std::string cfg_text = r.str(cfg_len, "config text");
  ModelConfig cfg;
  try {
    cfg = config_from_text(cfg_text);
  } catch (const Error& e) {
    raise(Err::ConfigIncompatible, std::string("embedded config rejected: ") + e.what());
  }

  Hcft model(cfg, 0);
  std::map<std::string, Tensor64> by_name;
  for (auto& [name, t] : model.named_tensors()) by_name.emplace(name, t);

  std::map<std::string, bool> filled;
  for (const auto& entry : by_name) filled[entry.first] = false;

  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16("tensor name length");
    const std::string name = r.str(name_len, "tensor name");
    const std::uint8_t rank = r.u8("tensor rank");
    Shape shape(rank);
    std::size_t n = 1;
    for (std::size_t d = 0; d < rank; ++d) {
      shape[d] = r.u32("tensor extent");
      n *= shape[d];
    }
    const auto it = by_name.find(name);
    if (it == by_name.end())
      raise(Err::BadCheckpoint, "checkpoint tensor '" + name + "' has no counterpart");
    if (it->second.shape() != shape)
      raise(Err::GeometryMismatch, "tensor '" + name + "' is " + shape_str(shape) +
                                       " in the checkpoint but " +
                                       shape_str(it->second.shape()) + " in the model");
    std::vector<double>& dst = it->second.values_mut();
    for (std::size_t v = 0; v < n; ++v) dst[v] = double(r.f32("tensor values"));
    filled[name] = true;
  }
  for (const auto& [name, got] : filled)
    if (!got) raise(Err::BadCheckpoint, "checkpoint is missing tensor '" + name + "'");
  return model;
}

void save_checkpoint(Hcft& model, const std::string& path) {
  write_file_bytes(path, checkpoint_bytes(model));
}

Hcft load_checkpoint(const std::string& path) {
  if (!std::filesystem::exists(path))
    raise(Err::MissingCheckpoint, "no checkpoint at " + path);
  return parse_checkpoint(read_file_bytes(path));
}

} // namespace hcft
