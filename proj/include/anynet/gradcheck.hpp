#pragma once

#include <functional>
#include <string>

#include "anynet/tensor.hpp"

namespace anynet {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "tensor#i[j]" of the worst coordinate
  std::size_t coords_checked = 0;
};

// Compares tape gradients of a scalar-valued function against central
// differences at every coordinate of `points`. Relative error per coordinate
// is |analytic - numeric| / max(1, |analytic|). The function must be pure in
// the point tensors (it is re-evaluated ~2x per coordinate). Run with S =
// double for meaningful bounds.
template <typename S>
GradCheckResult finite_diff_check(const std::function<Tensor<S>()>& fn,
                                  std::vector<Tensor<S>> points, double eps = 1e-5);

struct NamedCheck {
  std::string name;
  GradCheckResult result;
};

// Finite-difference sweep (64-bit) over every differentiable operator, ending
// with the joint loss of a tiny channel-split network as an end-to-end case.
// Deterministic in the seed.
std::vector<NamedCheck> gradient_battery(std::uint64_t seed = 1);

}  // namespace anynet
