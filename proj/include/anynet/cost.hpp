#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace anynet {

// Operation classes that carry a cost in the arithmetic budget. The price
// table (one unit = one multiply-add or one element visit) is:
//
//   kind            units charged
//   ------------    ----------------------------------------------
//   Conv            out_h * out_w * out_ch * (in_ch/groups) * kh * kw
//   Linear          in * out + out            (bias add included)
//   BatchNorm       one per input element
//   Relu            one per input element
//   ResidualAdd     one per element
//   AvgPool         out elements * kernel^2
//   GlobalAvgPool   one per input element
//   MaxPool         free (kept as a kind so reports can show the zero)
//
// Channel concat/slice, zero fill and softmax are free. Counts are whatever
// the kernel actually executes, so for per-sample budgets run batch size 1.
enum class OpKind : int {
  Conv = 0,
  Linear,
  BatchNorm,
  Relu,
  ResidualAdd,
  AvgPool,
  GlobalAvgPool,
  MaxPool,
  kCount
};

constexpr int kOpKindCount = static_cast<int>(OpKind::kCount);

const char* op_kind_name(OpKind kind);

// Accumulates units per kind. Kernels charge into every active scope, so a
// caller can meter a whole run while an inner component meters its own part.
struct CostCounter {
  std::array<std::uint64_t, kOpKindCount> units{};

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto u : units) t += u;
    return t;
  }
  std::uint64_t operator[](OpKind kind) const {
    return units[static_cast<int>(kind)];
  }
  void reset() { units.fill(0); }
};

// RAII activation of a counter. Scopes nest; charges go to all active ones.
class CostScope {
 public:
  explicit CostScope(CostCounter& counter);
  ~CostScope();
  CostScope(const CostScope&) = delete;
  CostScope& operator=(const CostScope&) = delete;

 private:
  CostCounter* counter_;
};

// Called by kernels. No-op when no scope is active.
void charge(OpKind kind, std::uint64_t units);
bool cost_tracking_active();

}  // namespace anynet
