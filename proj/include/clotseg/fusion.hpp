#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "clotseg/conv.hpp"
#include "clotseg/ops.hpp"
#include "clotseg/tensor.hpp"

namespace clotseg {

/// Geometry of the cross-attention block. The query side (DWI) uses patch
/// size p1, the key/value side (SWAN||PHASE) p2 <= p1; both live on the same
/// n1 x n1 plane.
struct FusionConfig {
  std::int64_t n1 = 256;
  std::int64_t p1 = 32;
  std::int64_t p2 = 4;
  std::int64_t d_k = 32;
  std::int64_t mlp_hidden = 32;

  void validate() const {
    if (n1 < 1 || p1 < 1 || p2 < 1 || d_k < 1 || mlp_hidden < 1) {
      throw ValueError("fusion: all sizes must be positive");
    }
    if (p1 % p2 != 0) {
      throw ValueError("fusion: p2 must divide p1 (" + std::to_string(p2) + " vs " +
                       std::to_string(p1) + ")");
    }
    if (n1 % p1 != 0 || n1 % p2 != 0) {
      throw ValueError("fusion: patch sizes must divide n1=" + std::to_string(n1));
    }
  }

  std::int64_t grid_q() const { return n1 / p1; }
  std::int64_t grid_kv() const { return n1 / p2; }
  std::int64_t up_factor() const { return p1 / p2; }
};

/// Token sequence with an optional class token at row 0. Reshaping to a
/// square map is defined only after the class token is dropped.
template <typename S>
struct TokenGrid {
  Tensor<S> tokens;  // [(grid_side^2 + has_class), d_k]
  std::int64_t grid_side = 0;
  bool has_class = true;
};

template <typename S>
struct NamedParam {
  std::string name;
  Tensor<S> tensor;
};

namespace detail {

template <typename S>
Tensor<S> glorot(Shape shape, std::int64_t fan_in, std::int64_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return Tensor<S>::rand_uniform(std::move(shape), rng, static_cast<S>(-limit),
                                 static_cast<S>(limit), true);
}

}  // namespace detail

/// Two-layer token MLP: linear, relu, linear over the last dimension.
template <typename S>
struct Mlp {
  Tensor<S> w1, b1, w2, b2;

  static Mlp init(std::int64_t d_in, std::int64_t hidden, std::int64_t d_out, Rng& rng) {
    Mlp m;
    m.w1 = detail::glorot<S>({d_in, hidden}, d_in, hidden, rng);
    m.b1 = Tensor<S>::zeros({hidden}, true);
    m.w2 = detail::glorot<S>({hidden, d_out}, hidden, d_out, rng);
    m.b2 = Tensor<S>::zeros({d_out}, true);
    return m;
  }

  Tensor<S> operator()(const Tensor<S>& x) const {
    auto h = relu(add_rowvec(matmul(x, w1), b1));
    return add_rowvec(matmul(h, w2), b2);
  }

  void collect(const std::string& prefix, std::vector<NamedParam<S>>& out) const {
    out.push_back({prefix + ".w1", w1});
    out.push_back({prefix + ".b1", b1});
    out.push_back({prefix + ".w2", w2});
    out.push_back({prefix + ".b2", b2});
  }
};

/// Learned affine layer norm over the token feature dimension.
template <typename S>
struct Norm {
  Tensor<S> gamma, beta;

  static Norm init(std::int64_t d) {
    Norm n;
    n.gamma = Tensor<S>::filled({d}, S(1), true);
    n.beta = Tensor<S>::zeros({d}, true);
    return n;
  }

  Tensor<S> operator()(const Tensor<S>& x) const { return layer_norm(x, gamma, beta); }

  void collect(const std::string& prefix, std::vector<NamedParam<S>>& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }
};

/// Strided-convolution patch projection plus learned class and position
/// embeddings (position added over the full sequence, class included).
template <typename S>
struct PatchEmbed {
  Tensor<S> proj_w, proj_b;  // [d_k, C, p, p], [d_k]
  Tensor<S> pos, cls;        // [(g^2+1), d_k], [1, d_k]
  std::int64_t patch = 0;

  static PatchEmbed init(std::int64_t channels, std::int64_t n, std::int64_t patch,
                         std::int64_t d_k, Rng& rng) {
    const std::int64_t g = n / patch;
    PatchEmbed e;
    e.patch = patch;
    const std::int64_t fan_in = channels * patch * patch;
    e.proj_w = detail::glorot<S>({d_k, channels, patch, patch}, fan_in, d_k, rng);
    e.proj_b = Tensor<S>::zeros({d_k}, true);
    e.pos = Tensor<S>::randn({g * g + 1, d_k}, rng, S(0.02), S(0), true);
    e.cls = Tensor<S>::randn({1, d_k}, rng, S(0.02), S(0), true);
    return e;
  }

  void collect(const std::string& prefix, std::vector<NamedParam<S>>& out) const {
    out.push_back({prefix + ".proj_w", proj_w});
    out.push_back({prefix + ".proj_b", proj_b});
    out.push_back({prefix + ".pos", pos});
    out.push_back({prefix + ".cls", cls});
  }
};

/// Projects an image into patch tokens: stride = kernel = patch, d_k output
/// channels, row-major flattening, class token prepended, position embedding
/// added to the whole sequence.
template <typename S>
TokenGrid<S> patch_embed(const Tensor<S>& img, const PatchEmbed<S>& embed) {
  const std::int64_t n = img.dim(1);
  if (n % embed.patch != 0) {
    throw ValueError("patch_embed: patch " + std::to_string(embed.patch) +
                     " does not divide image side " + std::to_string(n));
  }
  auto grid = conv2d(img, embed.proj_w, embed.proj_b, Padding::kValid, embed.patch);
  const std::int64_t g = grid.dim(1);
  auto tokens = chw_to_tokens(grid);                       // [g^2, d_k]
  auto seq = concat_dim0<S>({embed.cls, tokens});          // class at row 0
  TokenGrid<S> out;
  out.tokens = add(seq, embed.pos);
  out.grid_side = g;
  out.has_class = true;
  return out;
}

template <typename S>
struct AttentionResult {
  Tensor<S> out;      // [N_kv, d_k]
  Tensor<S> weights;  // [N_q, N_kv] row-stochastic
};

/// softmax(Q K^T / sqrt(d_k)) V.
template <typename S>
AttentionResult<S> scaled_dot_attention(const Tensor<S>& q, const Tensor<S>& k,
                                        const Tensor<S>& v, std::int64_t d_k) {
  auto scores = scalar_mul(matmul(q, transpose2d(k)),
                           static_cast<S>(1.0 / std::sqrt(static_cast<double>(d_k))));
  AttentionResult<S> res;
  res.weights = softmax_lastdim(scores);
  res.out = matmul(res.weights, v);
  return res;
}

/// Parameters for the whole per-slice fusion block (attention + upsampling).
template <typename S>
struct FusionParams {
  FusionConfig cfg;
  PatchEmbed<S> embed_q, embed_kv;
  Norm<S> norm_q, norm_kv, norm_res, norm_mlp, norm_up;
  Mlp<S> mlp_q, mlp_k, mlp_v, mlp_out;
  Tensor<S> lambda1, lambda2;
  Tensor<S> up_l1_w, up_l1_b;  // 3x3, 12 kernels over SWAN||PHASE
  Tensor<S> up_l2_w, up_l2_b;  // 7x7, d_k kernels over the concatenation

  static constexpr std::int64_t kUpChannels = 12;

  static FusionParams init(const FusionConfig& cfg, Rng& rng) {
    cfg.validate();
    FusionParams p;
    p.cfg = cfg;
    p.embed_q = PatchEmbed<S>::init(1, cfg.n1, cfg.p1, cfg.d_k, rng);
    p.embed_kv = PatchEmbed<S>::init(2, cfg.n1, cfg.p2, cfg.d_k, rng);
    p.norm_q = Norm<S>::init(cfg.d_k);
    p.norm_kv = Norm<S>::init(cfg.d_k);
    p.norm_res = Norm<S>::init(cfg.d_k);
    p.norm_mlp = Norm<S>::init(cfg.d_k);
    p.norm_up = Norm<S>::init(cfg.d_k);
    p.mlp_q = Mlp<S>::init(cfg.d_k, cfg.mlp_hidden, cfg.d_k, rng);
    p.mlp_k = Mlp<S>::init(cfg.d_k, cfg.mlp_hidden, cfg.d_k, rng);
    p.mlp_v = Mlp<S>::init(cfg.d_k, cfg.mlp_hidden, cfg.d_k, rng);
    p.mlp_out = Mlp<S>::init(cfg.d_k, cfg.mlp_hidden, cfg.d_k, rng);
    p.lambda1 = Tensor<S>::filled({1}, S(1), true);
    p.lambda2 = Tensor<S>::filled({1}, S(1), true);
    p.up_l1_w = detail::glorot<S>({kUpChannels, 2, 3, 3}, 2 * 9, kUpChannels * 9, rng);
    p.up_l1_b = Tensor<S>::zeros({kUpChannels}, true);
    const std::int64_t cat = kUpChannels + cfg.d_k;
    p.up_l2_w = detail::glorot<S>({cfg.d_k, cat, 7, 7}, cat * 49, cfg.d_k * 49, rng);
    p.up_l2_b = Tensor<S>::zeros({cfg.d_k}, true);
    return p;
  }

  void collect(const std::string& prefix, std::vector<NamedParam<S>>& out) const {
    embed_q.collect(prefix + ".embed_q", out);
    embed_kv.collect(prefix + ".embed_kv", out);
    norm_q.collect(prefix + ".norm_q", out);
    norm_kv.collect(prefix + ".norm_kv", out);
    mlp_q.collect(prefix + ".mlp_q", out);
    mlp_k.collect(prefix + ".mlp_k", out);
    mlp_v.collect(prefix + ".mlp_v", out);
    out.push_back({prefix + ".lambda1", lambda1});
    out.push_back({prefix + ".lambda2", lambda2});
    norm_res.collect(prefix + ".norm_res", out);
    norm_mlp.collect(prefix + ".norm_mlp", out);
    mlp_out.collect(prefix + ".mlp_out", out);
    out.push_back({prefix + ".up_l1_w", up_l1_w});
    out.push_back({prefix + ".up_l1_b", up_l1_b});
    out.push_back({prefix + ".up_l2_w", up_l2_w});
    out.push_back({prefix + ".up_l2_b", up_l2_b});
    norm_up.collect(prefix + ".norm_up", out);
  }
};

/// Cross-attention between the query grid (DWI) and the key/value grid
/// (SWAN||PHASE). The query token grid is upsampled by p1/p2 per axis before
/// attending; the class token is carried unchanged. The result has the
/// key/value token count.
template <typename S>
TokenGrid<S> cross_attention(const TokenGrid<S>& q_side, const TokenGrid<S>& kv_side,
                             const FusionParams<S>& params) {
  const std::int64_t factor = params.cfg.up_factor();
  if (q_side.grid_side * factor != kv_side.grid_side) {
    throw ShapeError("cross_attention: query grid " + std::to_string(q_side.grid_side) +
                     " x factor " + std::to_string(factor) + " != kv grid " +
                     std::to_string(kv_side.grid_side));
  }
  auto q = params.mlp_q(params.norm_q(q_side.tokens));
  auto kv_normed = params.norm_kv(kv_side.tokens);
  auto k = params.mlp_k(kv_normed);
  auto v = params.mlp_v(kv_normed);

  Tensor<S> q_up = q;
  if (factor > 1) {
    auto cls_row = slice_dim0(q, 0, 1);
    auto grid_rows = slice_dim0(q, 1, q.dim(0));
    q_up = concat_dim0<S>({cls_row, token_grid_upsample(grid_rows, factor)});
  }
  auto att = scaled_dot_attention(q_up, k, v, params.cfg.d_k);
  TokenGrid<S> out;
  out.tokens = att.out;
  out.grid_side = kv_side.grid_side;
  out.has_class = true;
  return out;
}

/// Residual head of the attention block: z3 = Norm(z12[1:] + l1 * z2[1:]),
/// z4 = z3 + l2 * MLP(Norm(z3)), reshaped to a [d_k, g, g] feature map. The
/// class tokens are skipped.
template <typename S>
Tensor<S> attention_residuals(const TokenGrid<S>& z12, const TokenGrid<S>& z2,
                              const FusionParams<S>& params) {
  if (z12.grid_side != z2.grid_side) {
    throw ShapeError("attention_residuals: grid sides disagree");
  }
  const std::int64_t g = z12.grid_side;
  auto skip = slice_dim0(z12.tokens, 1, z12.tokens.dim(0));
  auto att = slice_dim0(z2.tokens, 1, z2.tokens.dim(0));
  auto z3 = params.norm_res(add(skip, scale_by(att, params.lambda1)));
  auto z4 = add(z3, scale_by(params.mlp_out(params.norm_mlp(z3)), params.lambda2));
  return tokens_to_chw(z4, g, g);
}

/// Upsampling block: a1 = Relu(L1(SWAN||PHASE)) with 3x3 kernels, a2 is the
/// nearest-neighbour upsample of z4 by p2, and z5 = Elu(norm(L2(a1||a2)))
/// with 7x7 kernels and d_k channels, all same-padded. The norm is a layer
/// norm over the channel axis at each pixel.
template <typename S>
Tensor<S> upsample_block(const Tensor<S>& z4, const Tensor<S>& swan_phase,
                         const FusionParams<S>& params) {
  const std::int64_t n1 = swan_phase.dim(1);
  auto a1 = relu(conv2d(swan_phase, params.up_l1_w, params.up_l1_b, Padding::kSame));
  auto a2 = resize_nearest(z4, params.cfg.p2);
  auto cat = concat_dim0<S>({a1, a2});
  auto pre = conv2d(cat, params.up_l2_w, params.up_l2_b, Padding::kSame);
  auto normed = tokens_to_chw(params.norm_up(chw_to_tokens(pre)), n1, n1);
  return elu(normed);
}

/// Full per-slice fusion: DWI is the query side, SWAN||PHASE the key/value
/// side; output is a [d_k, n1, n1] feature map.
template <typename S>
Tensor<S> fusion_forward(const Tensor<S>& dwi, const Tensor<S>& swan_phase,
                         const FusionParams<S>& params) {
  auto q_grid = patch_embed(dwi, params.embed_q);
  auto kv_grid = patch_embed(swan_phase, params.embed_kv);
  auto z2 = cross_attention(q_grid, kv_grid, params);
  auto z4 = attention_residuals(kv_grid, z2, params);
  return upsample_block(z4, swan_phase, params);
}

}  // namespace clotseg
