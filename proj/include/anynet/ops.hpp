#pragma once

#include <vector>

#include "anynet/tensor.hpp"

namespace anynet {

// Differentiable operators. All take/return Tensor handles; when a GradTape
// is active (and any input requires grad somewhere upstream) they append a
// backward record to it. Shape violations throw ConfigError naming the
// offending dimension.

// 2-D convolution, stride/padding symmetric, grouped along channels.
// x: (N, Cin, H, W); w: (Cout, Cin/groups, kh, kw) -> (N, Cout, Hout, Wout).
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, int stride, int padding,
                 int groups);

// Fully connected: x (N, F), w (out, F), b (out) -> (N, out).
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b);

template <typename S>
Tensor<S> relu(const Tensor<S>& x);

// Elementwise; shapes must match exactly.
template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor);

// Full reduction to a scalar.
template <typename S>
Tensor<S> sum(const Tensor<S>& x);

// Concatenate along the channel axis (dim 1) of (N, C, H, W) tensors.
template <typename S>
Tensor<S> channel_concat(const std::vector<Tensor<S>>& xs);

// Slice `count` channels starting at `start` (dim 1).
template <typename S>
Tensor<S> channel_slice(const Tensor<S>& x, int start, int count);

// Generic contiguous slice along one axis (used for weight restriction).
template <typename S>
Tensor<S> slice_axis(const Tensor<S>& x, int axis, int start, int count);

// Round-trip helper for the slice/concat property: splits into equal groups.
template <typename S>
std::vector<Tensor<S>> channel_split(const Tensor<S>& x, int groups);

template <typename S>
Tensor<S> avg_pool2d(const Tensor<S>& x, int kernel, int stride);

template <typename S>
Tensor<S> max_pool2d(const Tensor<S>& x, int kernel, int stride);

// (N, C, H, W) -> (N, C), mean over the spatial extent.
template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x);

// Mean over the batch of -log softmax(logits)[label]. logits (N, classes).
// Labels outside [0, classes) are a data error.
template <typename S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels);

// Row-wise argmax of (N, classes) logits.
template <typename S>
std::vector<int> argmax_rows(const Tensor<S>& logits);

}  // namespace anynet
