// Budget-restricted and interruptible inference: pick the widest sub-network
// that fits a budget, or stream sub-networks in increasing width so an
// interrupt at any point yields the best prediction computed so far.
#pragma once

#include <vector>

#include "anynet/arch.hpp"
#include "anynet/flops.hpp"

namespace anynet {

// Largest k whose audited cost fits the budget. Below the cheapest
// sub-network this raises BudgetError carrying that minimum cost.
int restrict_to_budget(const FlopsReport& report, std::uint64_t budget_units);

// Argmax labels of sub-network k at `level` (1 = finest).
template <typename S>
std::vector<int> classify(AnytimeNetwork<S>& net, const Tensor<S>& x, int k, int level = 1);

// Lazily evaluates sub-networks 1..K on a fixed input, reusing all trunk work
// from earlier steps. Each advance() computes exactly one sub-network's
// increment plus its heads; interrupting between steps costs nothing. Only
// families whose sub-network computations nest as prefixes can stream
// (channel-split, shallow-exit, and the single-network plain family); the
// width-nested family re-runs its trunk per sub-network and is rejected.
// Evaluation mode only: batch statistics are never updated.
template <typename S>
class InterruptibleStream {
 public:
  struct Step {
    int k = 0;
    std::vector<Tensor<S>> logits;  // per level, finest first
    std::uint64_t step_units = 0;   // work done by this advance
    std::uint64_t total_units = 0;  // cumulative work since construction
  };

  // Construction performs no network computation.
  InterruptibleStream(AnytimeNetwork<S>& net, const Tensor<S>& x);

  int total_steps() const { return net_.cfg.subnetworks; }
  int completed() const { return k_; }
  bool done() const { return k_ >= total_steps(); }
  std::uint64_t total_units() const { return total_units_; }

  Step advance();

  // Prediction from the widest sub-network computed so far (the anytime
  // answer an interrupt would return). Usage error before the first step.
  const Step& best() const;

 private:
  Step advance_sparse();
  Step advance_shallow();
  Step finish(int k, Tensor<S> feat, const CostCounter& counter);

  AnytimeNetwork<S>& net_;
  Tensor<S> input_;
  int k_ = 0;
  std::uint64_t total_units_ = 0;
  Step last_;
  // Channel-split family: u_[b] caches the post-normalization activations of
  // block b for every group computed so far (later groups read them), and
  // tap_ holds the final feature prefix. Shallow exits reuse tap_ as the
  // trunk state after the last computed block.
  std::vector<Tensor<S>> u_;
  Tensor<S> tap_;
  int blocks_done_ = 0;
};

// CSV of the accuracy/cost trade-off: one row per (sub-network, level) with
// the audited cost and the measured error. Columns: k,level,flops,error.
std::string anytime_curve_csv(const FlopsReport& report,
                              const std::vector<std::vector<double>>& error);

}  // namespace anynet
