#pragma once

#include "fmu/encoders.hpp"
#include "fmu/nn.hpp"

#include <cmath>

namespace fmu::projector {

// Fuses the identity embedding with general patch features: the identity
// vector is expanded into N query tokens, patch tokens provide keys/values,
// and one attention + residual feed-forward layer emits N x d_ctx face
// tokens. Patch order is treated as a set (no positional encoding).
template <typename S>
struct Projector {
  nn::Linear<S> id_to_q;   // 512 -> n_tokens * d_attn
  nn::Linear<S> k_proj;    // d_vis -> d_attn
  nn::Linear<S> v_proj;    // d_vis -> d_attn
  nn::Linear<S> out_proj;  // d_attn -> d_ctx
  nn::FeedForward<S> ff;   // d_ctx -> d_ctx, residual
  int n_tokens = 4;
  int heads = 4;
  int d_attn = 64;
  int d_ctx = 64;

  struct Cache {
    Mat<S> id_row, q, patches, k, v, attn, t0;
    std::vector<Mat<S>> probs;
    typename nn::FeedForward<S>::Cache ff;
  };

  void init(int d_vis, int d_ctx_, int d_attn_, int n_tokens_, int heads_, int ff_mult, Rng& rng) {
    check_param(n_tokens_ >= 1, "projector: face token count must be >= 1");
    check_param(d_attn_ % heads_ == 0, "projector: head count must divide attention width");
    n_tokens = n_tokens_;
    heads = heads_;
    d_attn = d_attn_;
    d_ctx = d_ctx_;
    id_to_q.init(encoders::kIdDim, static_cast<Index>(n_tokens) * d_attn, rng);
    k_proj.init(d_vis, d_attn, rng);
    v_proj.init(d_vis, d_attn, rng);
    out_proj.init(d_attn, d_ctx, rng);
    ff.init(d_ctx, static_cast<Index>(ff_mult) * d_ctx, rng);
  }

  // id: unit-norm 512 vector; patches: P x d_vis. Returns N x d_ctx tokens.
  Mat<S> forward(const Vec<S>& id, const Mat<S>& patches, Cache* c) const {
    check_dim(id.size() == encoders::kIdDim, "project: identity embedding must have length 512");
    check_dim(patches.cols() == k_proj.in_dim(), "project: patch feature width mismatch");
    check_dim(patches.rows() >= 1, "project: need at least one patch token");
    Cache local;
    Cache& cc = c ? *c : local;
    cc.id_row = id.transpose();
    Mat<S> q_flat = id_to_q.forward(cc.id_row);  // 1 x N*d_attn
    cc.q.resize(n_tokens, d_attn);
    for (int i = 0; i < n_tokens; ++i)
      cc.q.row(i) = q_flat.block(0, static_cast<Index>(i) * d_attn, 1, d_attn);
    cc.patches = patches;
    cc.k = k_proj.forward(patches);
    cc.v = v_proj.forward(patches);
    cc.attn = nn::mha_forward(cc.q, cc.k, cc.v, heads, cc.probs);
    cc.t0 = out_proj.forward(cc.attn);
    return cc.t0 + ff.forward(cc.t0, &cc.ff);
  }

  // Accumulates parameter grads from dL/d(face tokens). Encoder outputs are
  // frozen, so their grads are discarded.
  void backward(const Cache& c, const Mat<S>& g_tokens) {
    Mat<S> g_t0 = g_tokens + ff.backward(c.ff, g_tokens);
    Mat<S> g_attn = out_proj.backward(c.attn, g_t0);
    Mat<S> gq, gk, gv;
    nn::mha_backward(c.q, c.k, c.v, heads, c.probs, g_attn, gq, gk, gv);
    k_proj.backward(c.patches, gk);
    v_proj.backward(c.patches, gv);
    Mat<S> gq_flat(1, static_cast<Index>(n_tokens) * d_attn);
    for (int i = 0; i < n_tokens; ++i)
      gq_flat.block(0, static_cast<Index>(i) * d_attn, 1, d_attn) = gq.row(i);
    id_to_q.backward(c.id_row, gq_flat);
  }

  void register_params(nn::ParamRegistry<S>& reg, const std::string& prefix) {
    id_to_q.register_params(reg, prefix + "id_to_q");
    k_proj.register_params(reg, prefix + "k");
    v_proj.register_params(reg, prefix + "v");
    out_proj.register_params(reg, prefix + "out");
    ff.register_params(reg, prefix + "ff");
  }
};

// normalize(alpha*a + (1-alpha)*b); the endpoints return the inputs
// unchanged so identity is preserved exactly.
template <typename S>
Vec<S> mix_identities(const Vec<S>& id_a, const Vec<S>& id_b, double alpha) {
  check_dim(id_a.size() == id_b.size(), "mix_identities: embedding lengths differ");
  check_param(alpha >= 0.0 && alpha <= 1.0, "mix_identities: alpha must be in [0, 1]");
  if (alpha == 1.0) return id_a;
  if (alpha == 0.0) return id_b;
  Vec<S> mixed = static_cast<S>(alpha) * id_a + static_cast<S>(1.0 - alpha) * id_b;
  double n = std::sqrt(static_cast<double>(mixed.template cast<double>().squaredNorm()));
  if (n < 1e-8)
    throw DegenerateInputError("mix_identities: mixed embedding has zero norm");
  return mixed / static_cast<S>(n);
}

}  // namespace fmu::projector
