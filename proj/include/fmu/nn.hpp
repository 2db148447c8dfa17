#pragma once

#include "fmu/core.hpp"
#include "fmu/rng.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace fmu::nn {

// ---------------------------------------------------------------------------
// Elementwise free functions
// ---------------------------------------------------------------------------

template <typename S>
Mat<S> silu(const Mat<S>& x) {
  return x.unaryExpr([](S v) { return v / (S(1) + std::exp(-v)); });
}

// dL/dx given pre-activation x and upstream dL/dy.
template <typename S>
Mat<S> silu_backward(const Mat<S>& x, const Mat<S>& gy) {
  Mat<S> d = x.unaryExpr([](S v) {
    S s = S(1) / (S(1) + std::exp(-v));
    return s * (S(1) + v * (S(1) - s));
  });
  return d.cwiseProduct(gy);
}

template <typename S>
void softmax_rows_inplace(Mat<S>& z) {
  for (Index i = 0; i < z.rows(); ++i) {
    S m = z.row(i).maxCoeff();
    z.row(i) = (z.row(i).array() - m).exp();
    z.row(i) /= z.row(i).sum();
  }
}

// dL/dz given probabilities p = softmax(z) and upstream dL/dp.
template <typename S>
Mat<S> softmax_rows_backward(const Mat<S>& p, const Mat<S>& gp) {
  Mat<S> gz(p.rows(), p.cols());
  for (Index i = 0; i < p.rows(); ++i) {
    S dot = p.row(i).dot(gp.row(i));
    gz.row(i) = (p.row(i).array() * (gp.row(i).array() - dot)).matrix();
  }
  return gz;
}

// ---------------------------------------------------------------------------
// Parameter registry: flat list of (name, value, grad) used by the optimizer,
// the checkpoint writer and the gradient checks.
// ---------------------------------------------------------------------------

template <typename S>
struct ParamRef {
  std::string name;
  Mat<S>* value = nullptr;
  Mat<S>* grad = nullptr;
};

template <typename S>
struct ParamRegistry {
  std::vector<ParamRef<S>> params;

  void add(const std::string& name, Mat<S>& value, Mat<S>& grad) {
    params.push_back({name, &value, &grad});
  }
  void zero_grads() {
    for (auto& p : params) p.grad->setZero();
  }
  size_t count() const {
    size_t n = 0;
    for (const auto& p : params) n += static_cast<size_t>(p.value->size());
    return n;
  }
};

// ---------------------------------------------------------------------------
// Linear: y = x W^T + b, W stored [out, in], b [1, out].
// ---------------------------------------------------------------------------

template <typename S>
struct Linear {
  Mat<S> w, b;
  Mat<S> gw, gb;

  void init(Index in, Index out, Rng& rng, double gain = 1.0) {
    w = gaussian_matrix<S>(out, in, rng, gain / std::sqrt(static_cast<double>(in)));
    b = Mat<S>::Zero(1, out);
    gw = Mat<S>::Zero(out, in);
    gb = Mat<S>::Zero(1, out);
  }
  void init_zero(Index in, Index out) {
    w = Mat<S>::Zero(out, in);
    b = Mat<S>::Zero(1, out);
    gw = Mat<S>::Zero(out, in);
    gb = Mat<S>::Zero(1, out);
  }

  Index in_dim() const { return w.cols(); }
  Index out_dim() const { return w.rows(); }

  Mat<S> forward(const Mat<S>& x) const {
    check_dim(x.cols() == w.cols(), "linear: input width mismatch");
    Mat<S> y = x * w.transpose();
    y.rowwise() += b.row(0);
    return y;
  }

  // Accumulates parameter grads, returns dL/dx. x must be the forward input.
  Mat<S> backward(const Mat<S>& x, const Mat<S>& gy) {
    gw.noalias() += gy.transpose() * x;
    gb += gy.colwise().sum();
    return gy * w;
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
    reg.add(prefix + ".w", w, gw);
    reg.add(prefix + ".b", b, gb);
  }
};

// ---------------------------------------------------------------------------
// Conv2d over [H*W, C] feature maps via im2col. Square kernels, zero padding.
// ---------------------------------------------------------------------------

template <typename S>
Mat<S> im2col(const Mat<S>& x, int h, int w, int k, int stride, int pad) {
  const Index c = x.cols();
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  Mat<S> cols = Mat<S>::Zero(static_cast<Index>(oh) * ow, static_cast<Index>(k) * k * c);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      Index row = static_cast<Index>(oy) * ow + ox;
      for (int ky = 0; ky < k; ++ky) {
        int iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          int ix = ox * stride + kx - pad;
          if (ix < 0 || ix >= w) continue;
          cols.block(row, (static_cast<Index>(ky) * k + kx) * c, 1, c) =
              x.row(static_cast<Index>(iy) * w + ix);
        }
      }
    }
  return cols;
}

template <typename S>
Mat<S> col2im_add(const Mat<S>& gcols, int h, int w, Index c, int k, int stride, int pad) {
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  Mat<S> gx = Mat<S>::Zero(static_cast<Index>(h) * w, c);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      Index row = static_cast<Index>(oy) * ow + ox;
      for (int ky = 0; ky < k; ++ky) {
        int iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          int ix = ox * stride + kx - pad;
          if (ix < 0 || ix >= w) continue;
          gx.row(static_cast<Index>(iy) * w + ix) +=
              gcols.block(row, (static_cast<Index>(ky) * k + kx) * c, 1, c);
        }
      }
    }
  return gx;
}

template <typename S>
struct Conv2d {
  int in_ch = 0, out_ch = 0, k = 3, stride = 1, pad = 1;
  Mat<S> w, b;  // w: [out, k*k*in]
  Mat<S> gw, gb;

  void init(int in, int out, int ksize, int stride_, Rng& rng, double gain = 1.0) {
    in_ch = in;
    out_ch = out;
    k = ksize;
    stride = stride_;
    pad = ksize / 2;
    Index fan_in = static_cast<Index>(k) * k * in;
    w = gaussian_matrix<S>(out, fan_in, rng, gain / std::sqrt(static_cast<double>(fan_in)));
    b = Mat<S>::Zero(1, out);
    gw = Mat<S>::Zero(out, fan_in);
    gb = Mat<S>::Zero(1, out);
  }
  void init_zero(int in, int out, int ksize, int stride_) {
    in_ch = in;
    out_ch = out;
    k = ksize;
    stride = stride_;
    pad = ksize / 2;
    Index fan_in = static_cast<Index>(k) * k * in;
    w = Mat<S>::Zero(out, fan_in);
    b = Mat<S>::Zero(1, out);
    gw = Mat<S>::Zero(out, fan_in);
    gb = Mat<S>::Zero(1, out);
  }

  int out_size(int s) const { return (s + 2 * pad - k) / stride + 1; }

  // cols_cache, when given, receives the im2col matrix the backward pass needs.
  Mat<S> forward(const Mat<S>& x, int h, int w_, Mat<S>* cols_cache = nullptr) const {
    check_dim(x.cols() == in_ch, "conv: channel mismatch");
    check_dim(x.rows() == static_cast<Index>(h) * w_, "conv: spatial size mismatch");
    Mat<S> cols = im2col(x, h, w_, k, stride, pad);
    Mat<S> y = cols * w.transpose();
    y.rowwise() += b.row(0);
    if (cols_cache) *cols_cache = std::move(cols);
    return y;
  }

  Mat<S> backward(const Mat<S>& cols, const Mat<S>& gy, int h, int w_) {
    gw.noalias() += gy.transpose() * cols;
    gb += gy.colwise().sum();
    Mat<S> gcols = gy * w;
    return col2im_add(gcols, h, w_, in_ch, k, stride, pad);
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
    reg.add(prefix + ".w", w, gw);
    reg.add(prefix + ".b", b, gb);
  }
};

// ---------------------------------------------------------------------------
// Multi-head scaled dot-product attention as free functions. q is [Nq, inner],
// k/v are [L, inner]; inner must be divisible by heads.
// ---------------------------------------------------------------------------

template <typename S>
Mat<S> mha_forward(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, int heads,
                   std::vector<Mat<S>>& probs_cache) {
  const Index inner = q.cols();
  check_dim(inner % heads == 0, "attention: head count must divide width");
  check_dim(k.cols() == inner && v.cols() == inner, "attention: k/v width mismatch");
  const Index dh = inner / heads;
  const S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));
  Mat<S> out(q.rows(), inner);
  probs_cache.resize(heads);
  for (int hd = 0; hd < heads; ++hd) {
    auto qh = q.middleCols(hd * dh, dh);
    auto kh = k.middleCols(hd * dh, dh);
    auto vh = v.middleCols(hd * dh, dh);
    Mat<S> logits = (qh * kh.transpose()) * scale;
    softmax_rows_inplace(logits);
    out.middleCols(hd * dh, dh) = logits * vh;
    probs_cache[hd] = std::move(logits);
  }
  return out;
}

template <typename S>
void mha_backward(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, int heads,
                  const std::vector<Mat<S>>& probs, const Mat<S>& gy, Mat<S>& gq, Mat<S>& gk,
                  Mat<S>& gv) {
  const Index inner = q.cols();
  const Index dh = inner / heads;
  const S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));
  gq = Mat<S>::Zero(q.rows(), q.cols());
  gk = Mat<S>::Zero(k.rows(), k.cols());
  gv = Mat<S>::Zero(v.rows(), v.cols());
  for (int hd = 0; hd < heads; ++hd) {
    auto vh = v.middleCols(hd * dh, dh);
    auto qh = q.middleCols(hd * dh, dh);
    auto kh = k.middleCols(hd * dh, dh);
    auto go = gy.middleCols(hd * dh, dh);
    const Mat<S>& p = probs[hd];
    gv.middleCols(hd * dh, dh) = p.transpose() * go;
    Mat<S> gp = go * vh.transpose();
    Mat<S> gl = softmax_rows_backward(p, gp);
    gq.middleCols(hd * dh, dh) = (gl * kh) * scale;
    gk.middleCols(hd * dh, dh) = (gl.transpose() * qh) * scale;
  }
}

// ---------------------------------------------------------------------------
// Cross-attention block: projections around mha. Queries come from x, keys
// and values from the context sequence.
// ---------------------------------------------------------------------------

template <typename S>
struct CrossAttention {
  Linear<S> q_proj, k_proj, v_proj, out_proj;
  int heads = 1;

  struct Cache {
    Mat<S> x, ctx, q, k, v, attn;
    std::vector<Mat<S>> probs;
  };

  void init(Index x_dim, Index ctx_dim, Index inner, int heads_, Rng& rng, bool zero_out) {
    heads = heads_;
    q_proj.init(x_dim, inner, rng);
    k_proj.init(ctx_dim, inner, rng);
    v_proj.init(ctx_dim, inner, rng);
    if (zero_out)
      out_proj.init_zero(inner, x_dim);
    else
      out_proj.init(inner, x_dim, rng);
  }

  Mat<S> forward(const Mat<S>& x, const Mat<S>& ctx, Cache* c) const {
    Cache local;
    Cache& cc = c ? *c : local;
    cc.x = x;
    cc.ctx = ctx;
    cc.q = q_proj.forward(x);
    cc.k = k_proj.forward(ctx);
    cc.v = v_proj.forward(ctx);
    cc.attn = mha_forward(cc.q, cc.k, cc.v, heads, cc.probs);
    return out_proj.forward(cc.attn);
  }

  // Returns (dL/dx, dL/dctx).
  std::pair<Mat<S>, Mat<S>> backward(const Cache& c, const Mat<S>& gy) {
    Mat<S> g_attn = out_proj.backward(c.attn, gy);
    Mat<S> gq, gk, gv;
    mha_backward(c.q, c.k, c.v, heads, c.probs, g_attn, gq, gk, gv);
    Mat<S> gx = q_proj.backward(c.x, gq);
    Mat<S> gctx = k_proj.backward(c.ctx, gk);
    gctx += v_proj.backward(c.ctx, gv);
    return {std::move(gx), std::move(gctx)};
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
    q_proj.register_params(reg, prefix + ".q");
    k_proj.register_params(reg, prefix + ".k");
    v_proj.register_params(reg, prefix + ".v");
    out_proj.register_params(reg, prefix + ".out");
  }
};

// ---------------------------------------------------------------------------
// Two-layer feed-forward with SiLU.
// ---------------------------------------------------------------------------

template <typename S>
struct FeedForward {
  Linear<S> f1, f2;

  struct Cache {
    Mat<S> x, h1, a;
  };

  void init(Index dim, Index hidden, Rng& rng) {
    f1.init(dim, hidden, rng);
    f2.init(hidden, dim, rng);
  }

  Mat<S> forward(const Mat<S>& x, Cache* c) const {
    Cache local;
    Cache& cc = c ? *c : local;
    cc.x = x;
    cc.h1 = f1.forward(x);
    cc.a = silu(cc.h1);
    return f2.forward(cc.a);
  }

  Mat<S> backward(const Cache& c, const Mat<S>& gy) {
    Mat<S> ga = f2.backward(c.a, gy);
    Mat<S> gh1 = silu_backward(c.h1, ga);
    return f1.backward(c.x, gh1);
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
    f1.register_params(reg, prefix + ".f1");
    f2.register_params(reg, prefix + ".f2");
  }
};

// ---------------------------------------------------------------------------
// Adam over a parameter registry.
// ---------------------------------------------------------------------------

template <typename S>
struct Adam {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;
  std::vector<Mat<S>> m, v;

  void step(ParamRegistry<S>& reg) {
    if (m.empty()) {
      m.reserve(reg.params.size());
      v.reserve(reg.params.size());
      for (auto& p : reg.params) {
        m.push_back(Mat<S>::Zero(p.value->rows(), p.value->cols()));
        v.push_back(Mat<S>::Zero(p.value->rows(), p.value->cols()));
      }
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < reg.params.size(); ++i) {
      const Mat<S>& g = *reg.params[i].grad;
      m[i] = S(beta1) * m[i] + S(1.0 - beta1) * g;
      v[i] = S(beta2) * v[i] + S(1.0 - beta2) * g.cwiseProduct(g);
      Mat<S> mhat = m[i] / S(bc1);
      Mat<S> vhat = v[i] / S(bc2);
      *reg.params[i].value -=
          (S(lr) * mhat.array() / (vhat.array().sqrt() + S(eps))).matrix();
    }
  }
};

// Sinusoidal timestep embedding, [1, dim]; cos half first.
template <typename S>
Mat<S> sinusoidal_embedding(double t, Index dim) {
  check_param(dim >= 2 && dim % 2 == 0, "time embedding width must be even");
  const Index half = dim / 2;
  Mat<S> e(1, dim);
  const double log_base = std::log(10000.0) / static_cast<double>(half);
  for (Index i = 0; i < half; ++i) {
    double freq = std::exp(-static_cast<double>(i) * log_base);
    e(0, i) = static_cast<S>(std::cos(t * freq));
    e(0, half + i) = static_cast<S>(std::sin(t * freq));
  }
  return e;
}

// Timestep MLP shared by the denoiser and its pose twin.
template <typename S>
struct TimeMlp {
  Linear<S> l1, l2;
  Index sin_dim = 0;

  struct Cache {
    Mat<S> e, h1, a;
  };

  void init(Index sin_dim_, Index out, Rng& rng) {
    sin_dim = sin_dim_;
    l1.init(sin_dim_, out, rng);
    l2.init(out, out, rng);
  }

  Mat<S> forward(double t, Cache* c) const {
    Cache local;
    Cache& cc = c ? *c : local;
    cc.e = sinusoidal_embedding<S>(t, sin_dim);
    cc.h1 = l1.forward(cc.e);
    cc.a = silu(cc.h1);
    return l2.forward(cc.a);
  }

  void backward(const Cache& c, const Mat<S>& gy) {
    Mat<S> ga = l2.backward(c.a, gy);
    Mat<S> gh1 = silu_backward(c.h1, ga);
    l1.backward(c.e, gh1);
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
    l1.register_params(reg, prefix + ".l1");
    l2.register_params(reg, prefix + ".l2");
  }
};

// Nearest-neighbour 2x upsample on [H*W, C] maps.
template <typename S>
Mat<S> upsample2(const Mat<S>& x, int h, int w) {
  Mat<S> y(static_cast<Index>(h) * w * 4, x.cols());
  for (int yy = 0; yy < h; ++yy)
    for (int xx = 0; xx < w; ++xx) {
      const auto row = x.row(static_cast<Index>(yy) * w + xx);
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          y.row((static_cast<Index>(yy) * 2 + dy) * (w * 2) + xx * 2 + dx) = row;
    }
  return y;
}

template <typename S>
Mat<S> upsample2_backward(const Mat<S>& gy, int h, int w) {
  Mat<S> gx = Mat<S>::Zero(static_cast<Index>(h) * w, gy.cols());
  for (int yy = 0; yy < h; ++yy)
    for (int xx = 0; xx < w; ++xx) {
      auto row = gx.row(static_cast<Index>(yy) * w + xx);
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          row += gy.row((static_cast<Index>(yy) * 2 + dy) * (w * 2) + xx * 2 + dx);
    }
  return gx;
}

}  // namespace fmu::nn
