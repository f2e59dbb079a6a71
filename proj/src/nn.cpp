#include "anynet/nn.hpp"

#include <cmath>

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
}  // namespace

template <typename S>
BatchNormState<S> BatchNormState<S>::init(int channels) {
  if (channels < 1) {
    throw ConfigError(detail::cat("batch norm channels must be >= 1, got ", channels));
  }
  BatchNormState<S> st;
  st.channels = channels;
  st.gamma = Tensor<S>::full({channels}, S(1));
  st.gamma.set_requires_grad(true);
  st.beta = Tensor<S>::zeros({channels});
  st.beta.set_requires_grad(true);
  st.running_mean.assign(channels, S(0));
  st.running_var.assign(channels, S(1));
  return st;
}

template <typename S>
Tensor<S> batch_norm(const Tensor<S>& x, BatchNormState<S>& state, Mode mode,
                     int ch_offset) {
  if (x.ndim() != 4) {
    throw ConfigError(detail::cat("batch_norm: input must be 4-d (N,C,H,W), got ",
                                  shape_str(x.shape())));
  }
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (ch_offset < 0 || ch_offset + C > state.channels) {
    throw ConfigError(detail::cat("batch_norm: channels [", ch_offset, ", ",
                                  ch_offset + C, ") outside state of ",
                                  state.channels));
  }
  if (mode == Mode::Train && N < 2) {
    throw UsageError("batch_norm: training mode needs a batch of at least 2");
  }

  const bool whole = (ch_offset == 0 && C == state.channels);
  Tensor<S> gamma = whole ? state.gamma : slice_axis(state.gamma, 0, ch_offset, C);
  Tensor<S> beta = whole ? state.beta : slice_axis(state.beta, 0, ch_offset, C);

  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  auto out = new_node<S>({N, C, H, W});

  const std::size_t hw = static_cast<std::size_t>(H) * W;
  const std::size_t per_channel = static_cast<std::size_t>(N) * hw;
  auto mean = std::make_shared<std::vector<S>>(C);
  auto invstd = std::make_shared<std::vector<S>>(C);

  const S* xv = xn->values.data();
  if (mode == Mode::Train) {
    for (int c = 0; c < C; ++c) {
      S m = S(0);
      for (int n = 0; n < N; ++n) {
        const S* p = xv + (static_cast<std::size_t>(n) * C + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) m += p[i];
      }
      m /= static_cast<S>(per_channel);
      S v = S(0);
      for (int n = 0; n < N; ++n) {
        const S* p = xv + (static_cast<std::size_t>(n) * C + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const S d = p[i] - m;
          v += d * d;
        }
      }
      v /= static_cast<S>(per_channel);  // biased variance for normalization
      (*mean)[c] = m;
      (*invstd)[c] = S(1) / std::sqrt(v + state.eps);
      const S unbiased = v * static_cast<S>(per_channel) /
                         static_cast<S>(per_channel - 1);
      state.running_mean[ch_offset + c] =
          (S(1) - state.momentum) * state.running_mean[ch_offset + c] + state.momentum * m;
      state.running_var[ch_offset + c] =
          (S(1) - state.momentum) * state.running_var[ch_offset + c] +
          state.momentum * unbiased;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      (*mean)[c] = state.running_mean[ch_offset + c];
      (*invstd)[c] = S(1) / std::sqrt(state.running_var[ch_offset + c] + state.eps);
    }
  }

  const S* gv = gn->values.data();
  const S* bv = bn->values.data();
  S* ov = out->values.data();
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const S* p = xv + (static_cast<std::size_t>(n) * C + c) * hw;
      S* o = ov + (static_cast<std::size_t>(n) * C + c) * hw;
      const S m = (*mean)[c], is = (*invstd)[c], g = gv[c], b = bv[c];
      for (std::size_t i = 0; i < hw; ++i) o[i] = (p[i] - m) * is * g + b;
    }
  }
  charge(OpKind::BatchNorm, static_cast<std::uint64_t>(N) * C * hw);

  GradTape<S>* tape = GradTape<S>::current();
  if (tape) {
    out->leaf = false;
    out->requires_grad = xn->requires_grad || gn->requires_grad || bn->requires_grad;
    const bool train = (mode == Mode::Train);
    tape->record("batch_norm", {xn, gn, bn}, out,
                 [xn, gn, bn, out, mean, invstd, N, C, hw, per_channel, train]() {
      const S* go = out->grad.data();
      const S* xv = xn->values.data();
      const S* gv = gn->values.data();
      S* dx = xn->grad.data();
      S* dg = gn->grad.data();
      S* db = bn->grad.data();
      for (int c = 0; c < C; ++c) {
        const S m = (*mean)[c], is = (*invstd)[c];
        S sum_dy = S(0), sum_dy_xhat = S(0);
        for (int n = 0; n < N; ++n) {
          const S* g = go + (static_cast<std::size_t>(n) * C + c) * hw;
          const S* p = xv + (static_cast<std::size_t>(n) * C + c) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            sum_dy += g[i];
            sum_dy_xhat += g[i] * (p[i] - m) * is;
          }
        }
        dg[c] += sum_dy_xhat;
        db[c] += sum_dy;
        const S gscale = gv[c] * is;
        if (train) {
          const S inv_n = S(1) / static_cast<S>(per_channel);
          for (int n = 0; n < N; ++n) {
            const S* g = go + (static_cast<std::size_t>(n) * C + c) * hw;
            const S* p = xv + (static_cast<std::size_t>(n) * C + c) * hw;
            S* d = dx + (static_cast<std::size_t>(n) * C + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              const S xhat = (p[i] - m) * is;
              d[i] += gscale * (g[i] - inv_n * sum_dy - xhat * inv_n * sum_dy_xhat);
            }
          }
        } else {
          for (int n = 0; n < N; ++n) {
            const S* g = go + (static_cast<std::size_t>(n) * C + c) * hw;
            S* d = dx + (static_cast<std::size_t>(n) * C + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) d[i] += gscale * g[i];
          }
        }
      }
    });
  } else {
    out->leaf = true;
  }
  if (debug_checks_enabled()) detail::check_finite(out->values, "batch_norm");
  return detail::wrap_node(std::move(out));
}

template <typename S>
void msra_fill(Tensor<S>& w, Rng& rng) {
  int fan_in;
  if (w.ndim() == 4) {
    fan_in = w.dim(1) * w.dim(2) * w.dim(3);
  } else if (w.ndim() == 2) {
    fan_in = w.dim(1);
  } else {
    throw UsageError(detail::cat("msra_fill: expected conv or linear weight, got ",
                                 shape_str(w.shape())));
  }
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::normal_distribution<double> dist(0.0, stddev);
  for (S& v : w.values()) v = static_cast<S>(dist(rng));
}

template <typename S>
Tensor<S> downsample_shortcut(const Tensor<S>& x, int out_channels, int groups) {
  const int C = x.dim(1);
  if (groups < 1 || C % groups != 0 || out_channels % groups != 0) {
    throw ConfigError(detail::cat("downsample_shortcut: channels ", C, " -> ",
                                  out_channels, " not divisible by groups ", groups));
  }
  const int cg = C / groups;
  const int og = out_channels / groups;
  if (og < cg) {
    throw ConfigError(detail::cat("downsample_shortcut: output group width ", og,
                                  " smaller than input group width ", cg));
  }
  const int N = x.dim(0);
  const int OH = (x.dim(2) - 2) / 2 + 1;
  const int OW = (x.dim(3) - 2) / 2 + 1;
  std::vector<Tensor<S>> pieces;
  pieces.reserve(static_cast<std::size_t>(groups) * 2);
  for (int g = 0; g < groups; ++g) {
    Tensor<S> part = (groups == 1) ? x : channel_slice(x, g * cg, cg);
    pieces.push_back(avg_pool2d(part, 2, 2));
    if (og > cg) pieces.push_back(Tensor<S>::zeros({N, og - cg, OH, OW}));
  }
  if (pieces.size() == 1) return pieces[0];
  return channel_concat(pieces);
}

template struct BatchNormState<float>;
template struct BatchNormState<double>;
template Tensor<float> batch_norm<float>(const Tensor<float>&, BatchNormState<float>&, Mode, int);
template Tensor<double> batch_norm<double>(const Tensor<double>&, BatchNormState<double>&, Mode, int);
template void msra_fill<float>(Tensor<float>&, Rng&);
template void msra_fill<double>(Tensor<double>&, Rng&);
template Tensor<float> downsample_shortcut<float>(const Tensor<float>&, int, int);
template Tensor<double> downsample_shortcut<double>(const Tensor<double>&, int, int);

}  // namespace anynet
