#pragma once

#include "anynet/ops.hpp"

namespace anynet {

enum class Mode { Train, Eval };

// Per-channel affine normalization state. gamma/beta are learnable leaves;
// running_mean/running_var are plain buffers updated only by training-mode
// forward passes with
//   running <- (1 - momentum) * running + momentum * batch_stat
// using the biased batch variance for normalization and the unbiased
// correction n/(n-1) when folding into running_var.
template <typename S>
struct BatchNormState {
  Tensor<S> gamma, beta;
  std::vector<S> running_mean, running_var;
  S momentum = S(0.1);
  S eps = S(1e-5);
  int channels = 0;

  static BatchNormState init(int channels);
};

// Normalizes x (N, C, H, W) against the state slice [ch_offset, ch_offset+C).
// Train mode uses batch statistics (batch of one is a usage error) and updates
// the running slice; eval mode reads running statistics only and mutates
// nothing. Gradients flow to x and to gamma/beta.
template <typename S>
Tensor<S> batch_norm(const Tensor<S>& x, BatchNormState<S>& state, Mode mode,
                     int ch_offset = 0);

// Fills a conv (out, in/groups, kh, kw) or linear (out, in) weight with
// N(0, sqrt(2/fan_in)) draws; fan_in is the per-output input count.
template <typename S>
void msra_fill(Tensor<S>& w, Rng& rng);

// Identity-style downsampling between scale stages: 2x2/2 average pooling,
// then width growth by zero-filled channels. With groups == 1 the zeros go
// after all pooled channels; with groups > 1 each group gets its own zero
// block so group g of the output depends only on group g of the input.
template <typename S>
Tensor<S> downsample_shortcut(const Tensor<S>& x, int out_channels, int groups = 1);

}  // namespace anynet
