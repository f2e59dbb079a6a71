#include "anynet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "anynet/cost.hpp"

namespace anynet {

namespace {

using anynet::detail::Node;

template <typename S>
std::shared_ptr<Node<S>> new_node(Shape shape) {
  auto n = std::make_shared<Node<S>>();
  n->id = detail::next_node_id();
  n->shape = std::move(shape);
  n->values.resize(static_cast<std::size_t>(shape_numel(n->shape)));
  return n;
}

// Registers the backward closure when a tape is active; otherwise the output
// is a detached constant. Also runs the debug finite check.
template <typename S>
Tensor<S> finish_op(const char* op, std::shared_ptr<Node<S>> out,
                    std::vector<std::shared_ptr<Node<S>>> inputs,
                    std::function<void()> backward_fn) {
  GradTape<S>* tape = GradTape<S>::current();
  if (tape) {
    out->leaf = false;
    for (const auto& in : inputs) out->requires_grad |= in->requires_grad;
    tape->record(op, std::move(inputs), out, std::move(backward_fn));
  } else {
    out->leaf = true;
  }
  if (debug_checks_enabled()) detail::check_finite(out->values, op);
  return detail::wrap_node(std::move(out));
}

template <typename S>
bool wants_grad(const std::shared_ptr<Node<S>>& n) {
  // Leaves that do not require gradients are dead ends; skip the work.
  return !n->leaf || n->requires_grad;
}

// ---- small row-major GEMM kernels -----------------------------------------
// All accumulate with a fixed, thread-free order so results are bit-stable.

// C[M,N] (+)= A[M,K] * B[K,N]
template <typename S>
void gemm_nn(int M, int N, int K, const S* A, const S* B, S* C, bool acc) {
  for (int m = 0; m < M; ++m) {
    S* crow = C + static_cast<std::size_t>(m) * N;
    if (!acc) std::fill(crow, crow + N, S(0));
    const S* arow = A + static_cast<std::size_t>(m) * K;
    for (int k = 0; k < K; ++k) {
      const S a = arow[k];
      const S* brow = B + static_cast<std::size_t>(k) * N;
      for (int n = 0; n < N; ++n) crow[n] += a * brow[n];
    }
  }
}

// C[M,N] (+)= A^T * B where A is (K,M): C[m,n] += sum_k A[k,m]*B[k,n]
template <typename S>
void gemm_tn(int M, int N, int K, const S* A, const S* B, S* C, bool acc) {
  for (int m = 0; m < M; ++m) {
    S* crow = C + static_cast<std::size_t>(m) * N;
    if (!acc) std::fill(crow, crow + N, S(0));
    for (int k = 0; k < K; ++k) {
      const S a = A[static_cast<std::size_t>(k) * M + m];
      const S* brow = B + static_cast<std::size_t>(k) * N;
      for (int n = 0; n < N; ++n) crow[n] += a * brow[n];
    }
  }
}

// C[M,N] (+)= A * B^T where A is (M,T), B is (N,T): row-dot products.
template <typename S>
void gemm_nt(int M, int N, int T, const S* A, const S* B, S* C, bool acc) {
  for (int m = 0; m < M; ++m) {
    const S* arow = A + static_cast<std::size_t>(m) * T;
    S* crow = C + static_cast<std::size_t>(m) * N;
    for (int n = 0; n < N; ++n) {
      const S* brow = B + static_cast<std::size_t>(n) * T;
      S dot = S(0);
      for (int t = 0; t < T; ++t) dot += arow[t] * brow[t];
      crow[n] = acc ? crow[n] + dot : dot;
    }
  }
}

// ---- im2col ----------------------------------------------------------------

struct ConvDims {
  int N, Cin, H, W;
  int Cout, kh, kw;
  int stride, pad, groups;
  int OH, OW;
  int in_pg, out_pg;     // channels per group
  int kblock;            // in_pg*kh*kw, the GEMM inner extent
};

// col has kblock rows by OH*OW columns; x points at the first channel of the
// group within one sample.
template <typename S>
void im2col(const S* x, const ConvDims& d, S* col) {
  const int OHW = d.OH * d.OW;
  for (int c = 0; c < d.in_pg; ++c) {
    const S* xc = x + static_cast<std::size_t>(c) * d.H * d.W;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        S* row = col + static_cast<std::size_t>((c * d.kh + ky) * d.kw + kx) * OHW;
        for (int oy = 0; oy < d.OH; ++oy) {
          const int iy = oy * d.stride - d.pad + ky;
          S* out = row + static_cast<std::size_t>(oy) * d.OW;
          if (iy < 0 || iy >= d.H) {
            std::fill(out, out + d.OW, S(0));
            continue;
          }
          const S* xrow = xc + static_cast<std::size_t>(iy) * d.W;
          for (int ox = 0; ox < d.OW; ++ox) {
            const int ix = ox * d.stride - d.pad + kx;
            out[ox] = (ix >= 0 && ix < d.W) ? xrow[ix] : S(0);
          }
        }
      }
    }
  }
}

// Scatter-add of a column-gradient buffer back onto the input gradient.
template <typename S>
void col2im_add(const S* col, const ConvDims& d, S* dx) {
  const int OHW = d.OH * d.OW;
  for (int c = 0; c < d.in_pg; ++c) {
    S* dxc = dx + static_cast<std::size_t>(c) * d.H * d.W;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        const S* row = col + static_cast<std::size_t>((c * d.kh + ky) * d.kw + kx) * OHW;
        for (int oy = 0; oy < d.OH; ++oy) {
          const int iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.H) continue;
          const S* in = row + static_cast<std::size_t>(oy) * d.OW;
          S* dxrow = dxc + static_cast<std::size_t>(iy) * d.W;
          for (int ox = 0; ox < d.OW; ++ox) {
            const int ix = ox * d.stride - d.pad + kx;
            if (ix >= 0 && ix < d.W) dxrow[ix] += in[ox];
          }
        }
      }
    }
  }
}

template <typename S>
ConvDims conv_dims(const Tensor<S>& x, const Tensor<S>& w, int stride, int padding,
                   int groups) {
  if (x.ndim() != 4) {
    throw ConfigError(detail::cat("conv2d: input must be 4-d (N,C,H,W), got ",
                                  shape_str(x.shape())));
  }
  if (w.ndim() != 4) {
    throw ConfigError(detail::cat("conv2d: weight must be 4-d (out,in/groups,kh,kw), got ",
                                  shape_str(w.shape())));
  }
  if (stride < 1) throw ConfigError(detail::cat("conv2d: stride must be >= 1, got ", stride));
  if (padding < 0) throw ConfigError(detail::cat("conv2d: padding must be >= 0, got ", padding));
  if (groups < 1) throw ConfigError(detail::cat("conv2d: groups must be >= 1, got ", groups));
  ConvDims d;
  d.N = x.dim(0); d.Cin = x.dim(1); d.H = x.dim(2); d.W = x.dim(3);
  d.Cout = w.dim(0); d.kh = w.dim(2); d.kw = w.dim(3);
  d.stride = stride; d.pad = padding; d.groups = groups;
  if (d.Cin % groups != 0) {
    throw ConfigError(detail::cat("conv2d: input channels ", d.Cin,
                                  " not divisible by groups ", groups));
  }
  if (d.Cout % groups != 0) {
    throw ConfigError(detail::cat("conv2d: output channels ", d.Cout,
                                  " not divisible by groups ", groups));
  }
  d.in_pg = d.Cin / groups;
  d.out_pg = d.Cout / groups;
  if (w.dim(1) != d.in_pg) {
    throw ConfigError(detail::cat("conv2d: weight in-channel extent ", w.dim(1),
                                  " != input channels ", d.Cin, " / groups ", groups));
  }
  d.OH = (d.H + 2 * padding - d.kh) / stride + 1;
  d.OW = (d.W + 2 * padding - d.kw) / stride + 1;
  if (d.kh > d.H + 2 * padding || d.kw > d.W + 2 * padding || d.OH < 1 || d.OW < 1) {
    throw ConfigError(detail::cat("conv2d: kernel ", d.kh, "x", d.kw,
                                  " does not fit input ", d.H, "x", d.W,
                                  " with padding ", padding));
  }
  d.kblock = d.in_pg * d.kh * d.kw;
  return d;
}

}  // namespace

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, int stride, int padding,
                 int groups) {
  const ConvDims d = conv_dims(x, w, stride, padding, groups);
  auto xn = x.node();
  auto wn = w.node();
  auto out = new_node<S>({d.N, d.Cout, d.OH, d.OW});

  const bool direct = (d.kh == 1 && d.kw == 1 && d.stride == 1 && d.pad == 0);
  const int OHW = d.OH * d.OW;
  std::vector<S> col;
  if (!direct) col.resize(static_cast<std::size_t>(d.kblock) * OHW);

  const S* xv = xn->values.data();
  const S* wv = wn->values.data();
  S* ov = out->values.data();
  for (int n = 0; n < d.N; ++n) {
    for (int g = 0; g < d.groups; ++g) {
      const S* xg = xv + (static_cast<std::size_t>(n) * d.Cin +
                          static_cast<std::size_t>(g) * d.in_pg) * d.H * d.W;
      const S* colp;
      if (direct) {
        colp = xg;  // the column matrix of a 1x1/s1/p0 conv is the input itself
      } else {
        im2col(xg, d, col.data());
        colp = col.data();
      }
      gemm_nn(d.out_pg, OHW, d.kblock,
              wv + static_cast<std::size_t>(g) * d.out_pg * d.kblock, colp,
              ov + (static_cast<std::size_t>(n) * d.Cout +
                    static_cast<std::size_t>(g) * d.out_pg) * OHW,
              false);
    }
  }
  charge(OpKind::Conv, static_cast<std::uint64_t>(d.N) * d.Cout * OHW * d.kblock);

  return finish_op<S>("conv2d", out, {xn, wn}, [xn, wn, out, d]() {
    const int OHW = d.OH * d.OW;
    const bool direct = (d.kh == 1 && d.kw == 1 && d.stride == 1 && d.pad == 0);
    const S* go = out->grad.data();
    const S* xv = xn->values.data();
    const S* wv = wn->values.data();
    const bool need_dx = wants_grad(xn);
    const bool need_dw = wants_grad(wn);
    if (!need_dx && !need_dw) return;
    std::vector<S> col, colg;
    if (!direct) {
      if (need_dw) col.resize(static_cast<std::size_t>(d.kblock) * OHW);
      if (need_dx) colg.resize(static_cast<std::size_t>(d.kblock) * OHW);
    }
    for (int n = 0; n < d.N; ++n) {
      for (int g = 0; g < d.groups; ++g) {
        const std::size_t xoff = (static_cast<std::size_t>(n) * d.Cin +
                                  static_cast<std::size_t>(g) * d.in_pg) * d.H * d.W;
        const S* gog = go + (static_cast<std::size_t>(n) * d.Cout +
                             static_cast<std::size_t>(g) * d.out_pg) * OHW;
        const S* wg = wv + static_cast<std::size_t>(g) * d.out_pg * d.kblock;
        if (need_dw) {
          const S* colp;
          if (direct) {
            colp = xv + xoff;
          } else {
            im2col(xv + xoff, d, col.data());
            colp = col.data();
          }
          gemm_nt(d.out_pg, d.kblock, OHW, gog, colp,
                  wn->grad.data() + static_cast<std::size_t>(g) * d.out_pg * d.kblock,
                  true);
        }
        if (need_dx) {
          if (direct) {
            gemm_tn(d.kblock, OHW, d.out_pg, wg, gog, xn->grad.data() + xoff, true);
          } else {
            gemm_tn(d.kblock, OHW, d.out_pg, wg, gog, colg.data(), false);
            col2im_add(colg.data(), d, xn->grad.data() + xoff);
          }
        }
      }
    }
  });
}

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  if (x.ndim() != 2) {
    throw ConfigError(detail::cat("linear: input must be 2-d (N,F), got ",
                                  shape_str(x.shape())));
  }
  if (w.ndim() != 2) {
    throw ConfigError(detail::cat("linear: weight must be 2-d (out,F), got ",
                                  shape_str(w.shape())));
  }
  const int N = x.dim(0), F = x.dim(1), out_features = w.dim(0);
  if (w.dim(1) != F) {
    throw ConfigError(detail::cat("linear: weight in-extent ", w.dim(1),
                                  " != input features ", F));
  }
  if (b.ndim() != 1 || b.dim(0) != out_features) {
    throw ConfigError(detail::cat("linear: bias shape ", shape_str(b.shape()),
                                  " != (", out_features, ")"));
  }
  auto xn = x.node(); auto wn = w.node(); auto bn = b.node();
  auto outn = new_node<S>({N, out_features});
  gemm_nt(N, out_features, F, xn->values.data(), wn->values.data(),
          outn->values.data(), false);
  S* ov = outn->values.data();
  const S* bv = bn->values.data();
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < out_features; ++o) ov[static_cast<std::size_t>(n) * out_features + o] += bv[o];
  charge(OpKind::Linear,
         static_cast<std::uint64_t>(N) * (static_cast<std::uint64_t>(F) * out_features + out_features));

  return finish_op<S>("linear", outn, {xn, wn, bn}, [xn, wn, bn, outn, N, F, out_features]() {
    const S* go = outn->grad.data();
    if (wants_grad(xn)) {
      gemm_nn(N, F, out_features, go, wn->values.data(), xn->grad.data(), true);
    }
    if (wants_grad(wn)) {
      gemm_tn(out_features, F, N, go, xn->values.data(), wn->grad.data(), true);
    }
    if (wants_grad(bn)) {
      S* db = bn->grad.data();
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < out_features; ++o) db[o] += go[static_cast<std::size_t>(n) * out_features + o];
    }
  });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  auto xn = x.node();
  auto out = new_node<S>(xn->shape);
  const S* xv = xn->values.data();
  S* ov = out->values.data();
  const std::size_t n = xn->values.size();
  for (std::size_t i = 0; i < n; ++i) ov[i] = xv[i] > S(0) ? xv[i] : S(0);
  charge(OpKind::Relu, n);
  return finish_op<S>("relu", out, {xn}, [xn, out, n]() {
    if (!wants_grad(xn)) return;
    const S* go = out->grad.data();
    const S* xv = xn->values.data();
    S* dx = xn->grad.data();
    // Subgradient at exactly zero is zero.
    for (std::size_t i = 0; i < n; ++i)
      if (xv[i] > S(0)) dx[i] += go[i];
  });
}

namespace {
template <typename S>
void check_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) {
    throw ConfigError(detail::cat(op, ": shape mismatch ", shape_str(a.shape()),
                                  " vs ", shape_str(b.shape())));
  }
}
}  // namespace

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape("add", a, b);
  auto an = a.node(); auto bn = b.node();
  auto out = new_node<S>(an->shape);
  const std::size_t n = an->values.size();
  const S* av = an->values.data();
  const S* bv = bn->values.data();
  S* ov = out->values.data();
  for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
  charge(OpKind::ResidualAdd, n);
  return finish_op<S>("add", out, {an, bn}, [an, bn, out, n]() {
    const S* go = out->grad.data();
    if (wants_grad(an)) {
      S* da = an->grad.data();
      for (std::size_t i = 0; i < n; ++i) da[i] += go[i];
    }
    if (wants_grad(bn)) {
      S* db = bn->grad.data();
      for (std::size_t i = 0; i < n; ++i) db[i] += go[i];
    }
  });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape("mul", a, b);
  auto an = a.node(); auto bn = b.node();
  auto out = new_node<S>(an->shape);
  const std::size_t n = an->values.size();
  const S* av = an->values.data();
  const S* bv = bn->values.data();
  S* ov = out->values.data();
  for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i];
  return finish_op<S>("mul", out, {an, bn}, [an, bn, out, n]() {
    const S* go = out->grad.data();
    const S* av = an->values.data();
    const S* bv = bn->values.data();
    if (wants_grad(an)) {
      S* da = an->grad.data();
      for (std::size_t i = 0; i < n; ++i) da[i] += go[i] * bv[i];
    }
    if (wants_grad(bn)) {
      S* db = bn->grad.data();
      for (std::size_t i = 0; i < n; ++i) db[i] += go[i] * av[i];
    }
  });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor) {
  auto xn = x.node();
  auto out = new_node<S>(xn->shape);
  const std::size_t n = xn->values.size();
  const S* xv = xn->values.data();
  S* ov = out->values.data();
  for (std::size_t i = 0; i < n; ++i) ov[i] = xv[i] * factor;
  return finish_op<S>("scale", out, {xn}, [xn, out, n, factor]() {
    if (!wants_grad(xn)) return;
    const S* go = out->grad.data();
    S* dx = xn->grad.data();
    for (std::size_t i = 0; i < n; ++i) dx[i] += go[i] * factor;
  });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  auto xn = x.node();
  auto out = new_node<S>(Shape{1});
  S acc = S(0);
  for (const S& v : xn->values) acc += v;
  out->values[0] = acc;
  const std::size_t n = xn->values.size();
  return finish_op<S>("sum", out, {xn}, [xn, out, n]() {
    if (!wants_grad(xn)) return;
    const S g = out->grad[0];
    S* dx = xn->grad.data();
    for (std::size_t i = 0; i < n; ++i) dx[i] += g;
  });
}

template <typename S>
Tensor<S> channel_concat(const std::vector<Tensor<S>>& xs) {
  if (xs.empty()) throw UsageError("channel_concat: empty input list");
  const int N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
  int C = 0;
  std::vector<std::shared_ptr<Node<S>>> nodes;
  for (const Tensor<S>& x : xs) {
    if (x.ndim() != 4 || x.dim(0) != N || x.dim(2) != H || x.dim(3) != W) {
      throw ConfigError(detail::cat("channel_concat: shape ", shape_str(x.shape()),
                                    " incompatible with ", shape_str(xs[0].shape())));
    }
    C += x.dim(1);
    nodes.push_back(x.node());
  }
  auto out = new_node<S>({N, C, H, W});
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  S* ov = out->values.data();
  for (int n = 0; n < N; ++n) {
    std::size_t coff = 0;
    for (const auto& xn : nodes) {
      const int ci = xn->shape[1];
      std::memcpy(ov + (static_cast<std::size_t>(n) * C + coff) * hw,
                  xn->values.data() + static_cast<std::size_t>(n) * ci * hw,
                  sizeof(S) * ci * hw);
      coff += ci;
    }
  }
  return finish_op<S>("channel_concat", out, nodes, [nodes, out, N, C, hw]() {
    const S* go = out->grad.data();
    for (int n = 0; n < N; ++n) {
      std::size_t coff = 0;
      for (const auto& xn : nodes) {
        const int ci = xn->shape[1];
        if (wants_grad(xn)) {
          S* dx = xn->grad.data() + static_cast<std::size_t>(n) * ci * hw;
          const S* g = go + (static_cast<std::size_t>(n) * C + coff) * hw;
          for (std::size_t i = 0; i < ci * hw; ++i) dx[i] += g[i];
        }
        coff += ci;
      }
    }
  });
}

template <typename S>
Tensor<S> slice_axis(const Tensor<S>& x, int axis, int start, int count) {
  const Shape& s = x.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw UsageError(detail::cat("slice_axis: axis ", axis, " out of range for ",
                                 shape_str(s)));
  }
  if (start < 0 || count < 1 || start + count > s[axis]) {
    throw UsageError(detail::cat("slice_axis: range [", start, ", ", start + count,
                                 ") invalid for extent ", s[axis]));
  }
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) inner *= s[i];
  Shape oshape = s;
  oshape[axis] = count;
  auto xn = x.node();
  auto out = new_node<S>(oshape);
  const S* xv = xn->values.data();
  S* ov = out->values.data();
  const std::size_t extent = s[axis];
  for (std::size_t o = 0; o < outer; ++o) {
    std::memcpy(ov + o * count * inner,
                xv + (o * extent + start) * inner,
                sizeof(S) * count * inner);
  }
  return finish_op<S>("slice_axis", out, {xn},
                      [xn, out, outer, inner, extent, start, count]() {
    if (!wants_grad(xn)) return;
    const S* go = out->grad.data();
    S* dx = xn->grad.data();
    for (std::size_t o = 0; o < outer; ++o) {
      S* d = dx + (o * extent + start) * inner;
      const S* g = go + o * count * inner;
      for (std::size_t i = 0; i < static_cast<std::size_t>(count) * inner; ++i) d[i] += g[i];
    }
  });
}

template <typename S>
Tensor<S> channel_slice(const Tensor<S>& x, int start, int count) {
  if (x.ndim() != 4 && x.ndim() != 2) {
    throw UsageError(detail::cat("channel_slice: expected 2-d or 4-d input, got ",
                                 shape_str(x.shape())));
  }
  return slice_axis(x, 1, start, count);
}

template <typename S>
std::vector<Tensor<S>> channel_split(const Tensor<S>& x, int groups) {
  const int C = x.dim(1);
  if (groups < 1 || C % groups != 0) {
    throw UsageError(detail::cat("channel_split: channels ", C,
                                 " not divisible by groups ", groups));
  }
  const int per = C / groups;
  std::vector<Tensor<S>> out;
  out.reserve(groups);
  for (int g = 0; g < groups; ++g) out.push_back(channel_slice(x, g * per, per));
  return out;
}

template <typename S>
Tensor<S> avg_pool2d(const Tensor<S>& x, int kernel, int stride) {
  if (x.ndim() != 4) {
    throw ConfigError(detail::cat("avg_pool2d: input must be 4-d, got ", shape_str(x.shape())));
  }
  if (kernel < 1 || stride < 1) {
    throw ConfigError(detail::cat("avg_pool2d: kernel ", kernel, " / stride ", stride,
                                  " must be >= 1"));
  }
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (kernel > H || kernel > W) {
    throw ConfigError(detail::cat("avg_pool2d: kernel ", kernel, " larger than input ",
                                  H, "x", W));
  }
  const int OH = (H - kernel) / stride + 1;
  const int OW = (W - kernel) / stride + 1;
  auto xn = x.node();
  auto out = new_node<S>({N, C, OH, OW});
  const S inv = S(1) / static_cast<S>(kernel * kernel);
  const S* xv = xn->values.data();
  S* ov = out->values.data();
  for (int nc = 0; nc < N * C; ++nc) {
    const S* xp = xv + static_cast<std::size_t>(nc) * H * W;
    S* op = ov + static_cast<std::size_t>(nc) * OH * OW;
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox) {
        S acc = S(0);
        for (int ky = 0; ky < kernel; ++ky) {
          const S* row = xp + static_cast<std::size_t>(oy * stride + ky) * W + ox * stride;
          for (int kx = 0; kx < kernel; ++kx) acc += row[kx];
        }
        op[static_cast<std::size_t>(oy) * OW + ox] = acc * inv;
      }
    }
  }
  charge(OpKind::AvgPool,
         static_cast<std::uint64_t>(N) * C * OH * OW * kernel * kernel);
  return finish_op<S>("avg_pool2d", out, {xn},
                      [xn, out, N, C, H, W, OH, OW, kernel, stride, inv]() {
    if (!wants_grad(xn)) return;
    const S* go = out->grad.data();
    S* dx = xn->grad.data();
    for (int nc = 0; nc < N * C; ++nc) {
      S* dxp = dx + static_cast<std::size_t>(nc) * H * W;
      const S* gp = go + static_cast<std::size_t>(nc) * OH * OW;
      for (int oy = 0; oy < OH; ++oy) {
        for (int ox = 0; ox < OW; ++ox) {
          const S g = gp[static_cast<std::size_t>(oy) * OW + ox] * inv;
          for (int ky = 0; ky < kernel; ++ky) {
            S* row = dxp + static_cast<std::size_t>(oy * stride + ky) * W + ox * stride;
            for (int kx = 0; kx < kernel; ++kx) row[kx] += g;
          }
        }
      }
    }
  });
}

template <typename S>
Tensor<S> max_pool2d(const Tensor<S>& x, int kernel, int stride) {
  if (x.ndim() != 4) {
    throw ConfigError(detail::cat("max_pool2d: input must be 4-d, got ", shape_str(x.shape())));
  }
  if (kernel < 1 || stride < 1) {
    throw ConfigError(detail::cat("max_pool2d: kernel ", kernel, " / stride ", stride,
                                  " must be >= 1"));
  }
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (kernel > H || kernel > W) {
    throw ConfigError(detail::cat("max_pool2d: kernel ", kernel, " larger than input ",
                                  H, "x", W));
  }
  const int OH = (H - kernel) / stride + 1;
  const int OW = (W - kernel) / stride + 1;
  auto xn = x.node();
  auto out = new_node<S>({N, C, OH, OW});
  auto argmax = std::make_shared<std::vector<int>>(out->values.size());
  const S* xv = xn->values.data();
  S* ov = out->values.data();
  int* am = argmax->data();
  for (int nc = 0; nc < N * C; ++nc) {
    const S* xp = xv + static_cast<std::size_t>(nc) * H * W;
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox) {
        int best = (oy * stride) * W + ox * stride;
        S bv = xp[best];
        for (int ky = 0; ky < kernel; ++ky) {
          for (int kx = 0; kx < kernel; ++kx) {
            const int idx = (oy * stride + ky) * W + ox * stride + kx;
            if (xp[idx] > bv) { bv = xp[idx]; best = idx; }
          }
        }
        const std::size_t o = static_cast<std::size_t>(nc) * OH * OW + oy * OW + ox;
        ov[o] = bv;
        am[o] = best;
      }
    }
  }
  // Max pooling is free in the budget convention.
  charge(OpKind::MaxPool, 0);
  return finish_op<S>("max_pool2d", out, {xn}, [xn, out, argmax, N, C, H, W, OH, OW]() {
    if (!wants_grad(xn)) return;
    const S* go = out->grad.data();
    S* dx = xn->grad.data();
    const int* am = argmax->data();
    for (int nc = 0; nc < N * C; ++nc) {
      S* dxp = dx + static_cast<std::size_t>(nc) * H * W;
      const std::size_t base = static_cast<std::size_t>(nc) * OH * OW;
      for (int i = 0; i < OH * OW; ++i) dxp[am[base + i]] += go[base + i];
    }
  });
}

template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  if (x.ndim() != 4) {
    throw ConfigError(detail::cat("global_avg_pool: input must be 4-d, got ",
                                  shape_str(x.shape())));
  }
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  auto xn = x.node();
  auto out = new_node<S>({N, C});
  const S inv = S(1) / static_cast<S>(H * W);
  const S* xv = xn->values.data();
  S* ov = out->values.data();
  for (int nc = 0; nc < N * C; ++nc) {
    const S* xp = xv + static_cast<std::size_t>(nc) * H * W;
    S acc = S(0);
    for (int i = 0; i < H * W; ++i) acc += xp[i];
    ov[nc] = acc * inv;
  }
  charge(OpKind::GlobalAvgPool, static_cast<std::uint64_t>(N) * C * H * W);
  return finish_op<S>("global_avg_pool", out, {xn}, [xn, out, N, C, H, W, inv]() {
    if (!wants_grad(xn)) return;
    const S* go = out->grad.data();
    S* dx = xn->grad.data();
    for (int nc = 0; nc < N * C; ++nc) {
      const S g = go[nc] * inv;
      S* dxp = dx + static_cast<std::size_t>(nc) * H * W;
      for (int i = 0; i < H * W; ++i) dxp[i] += g;
    }
  });
}

template <typename S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) {
    throw ConfigError(detail::cat("softmax_cross_entropy: logits must be 2-d, got ",
                                  shape_str(logits.shape())));
  }
  const int N = logits.dim(0), C = logits.dim(1);
  if (static_cast<int>(labels.size()) != N) {
    throw UsageError(detail::cat("softmax_cross_entropy: ", labels.size(),
                                 " labels for batch of ", N));
  }
  for (int n = 0; n < N; ++n) {
    if (labels[n] < 0 || labels[n] >= C) {
      throw DataError(detail::cat("label ", labels[n], " outside [0, ", C,
                                  ") at row ", n));
    }
  }
  auto xn = logits.node();
  auto out = new_node<S>(Shape{1});
  const S* xv = xn->values.data();
  S total = S(0);
  for (int n = 0; n < N; ++n) {
    const S* row = xv + static_cast<std::size_t>(n) * C;
    S mx = row[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    S se = S(0);
    for (int c = 0; c < C; ++c) se += std::exp(row[c] - mx);
    total += (mx + std::log(se)) - row[labels[n]];
  }
  out->values[0] = total / static_cast<S>(N);
  auto labels_copy = std::make_shared<std::vector<int>>(labels);
  return finish_op<S>("softmax_cross_entropy", out, {xn}, [xn, out, labels_copy, N, C]() {
    if (!wants_grad(xn)) return;
    const S g = out->grad[0] / static_cast<S>(N);
    const S* xv = xn->values.data();
    S* dx = xn->grad.data();
    for (int n = 0; n < N; ++n) {
      const S* row = xv + static_cast<std::size_t>(n) * C;
      S* drow = dx + static_cast<std::size_t>(n) * C;
      S mx = row[0];
      for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
      S se = S(0);
      for (int c = 0; c < C; ++c) se += std::exp(row[c] - mx);
      for (int c = 0; c < C; ++c) {
        const S p = std::exp(row[c] - mx) / se;
        drow[c] += g * (p - (c == (*labels_copy)[n] ? S(1) : S(0)));
      }
    }
  });
}

template <typename S>
std::vector<int> argmax_rows(const Tensor<S>& logits) {
  if (logits.ndim() != 2) {
    throw UsageError(detail::cat("argmax_rows: expected 2-d logits, got ",
                                 shape_str(logits.shape())));
  }
  const int N = logits.dim(0), C = logits.dim(1);
  const S* xv = logits.data();
  std::vector<int> out(N);
  for (int n = 0; n < N; ++n) {
    const S* row = xv + static_cast<std::size_t>(n) * C;
    int best = 0;
    for (int c = 1; c < C; ++c)
      if (row[c] > row[best]) best = c;
    out[n] = best;
  }
  return out;
}

#define ANYNET_INSTANTIATE_OPS(S)                                                        \
  template Tensor<S> conv2d<S>(const Tensor<S>&, const Tensor<S>&, int, int, int);       \
  template Tensor<S> linear<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);    \
  template Tensor<S> relu<S>(const Tensor<S>&);                                          \
  template Tensor<S> add<S>(const Tensor<S>&, const Tensor<S>&);                         \
  template Tensor<S> mul<S>(const Tensor<S>&, const Tensor<S>&);                         \
  template Tensor<S> scale<S>(const Tensor<S>&, S);                                      \
  template Tensor<S> sum<S>(const Tensor<S>&);                                           \
  template Tensor<S> channel_concat<S>(const std::vector<Tensor<S>>&);                   \
  template Tensor<S> channel_slice<S>(const Tensor<S>&, int, int);                       \
  template Tensor<S> slice_axis<S>(const Tensor<S>&, int, int, int);                     \
  template std::vector<Tensor<S>> channel_split<S>(const Tensor<S>&, int);               \
  template Tensor<S> avg_pool2d<S>(const Tensor<S>&, int, int);                          \
  template Tensor<S> max_pool2d<S>(const Tensor<S>&, int, int);                          \
  template Tensor<S> global_avg_pool<S>(const Tensor<S>&);                               \
  template Tensor<S> softmax_cross_entropy<S>(const Tensor<S>&, const std::vector<int>&); \
  template std::vector<int> argmax_rows<S>(const Tensor<S>&);

ANYNET_INSTANTIATE_OPS(float)
ANYNET_INSTANTIATE_OPS(double)

}  // namespace anynet
