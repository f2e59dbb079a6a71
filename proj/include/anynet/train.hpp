// Joint training of every sub-network (and every hierarchy level) of an
// anytime network, with SGD + Nesterov momentum and a stepped learning-rate
// schedule, plus evaluation and CSV logging.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "anynet/arch.hpp"
#include "anynet/data.hpp"

namespace anynet {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;
  bool augment = true;
  double divergence_cap = 1e4;  // loss above this (or non-finite) aborts

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Stepped schedule: the base rate is divided by 10 at floor(E/2) and again at
// floor(3E/4). `epoch` is zero-based.
double lr_at(const TrainConfig& cfg, int epoch);

// SGD with Nesterov momentum in the standard incremental form:
//   g <- grad + weight_decay * p
//   v <- momentum * v + g
//   p <- p - lr * (g + momentum * v)
// Parameters whose gradient was never touched in the step are left unchanged.
template <typename S>
struct SgdState {
  std::vector<std::vector<S>> velocity;  // parallel to the parameter list

  explicit SgdState(const std::vector<Tensor<S>>& params);
  void step(std::vector<Tensor<S>>& params, double lr, double momentum,
            double weight_decay);
};

// Mean cross-entropy over every (sub-network, level) pair. `labels_by_level`
// holds one label vector per level, finest first, and must match the network's
// level count. When `outs` is non-null the per-(k, level) logits are stored
// there. Recorded on the active tape in Train mode.
template <typename S>
Tensor<S> joint_loss(AnytimeNetwork<S>& net, const Tensor<S>& x,
                     const std::vector<std::vector<int>>& labels_by_level, Mode mode,
                     std::vector<std::vector<Tensor<S>>>* outs = nullptr);

struct LogRow {
  int epoch = 0;   // 1-based
  int k = 0;       // sub-network
  int level = 0;   // 1 = finest
  std::string split;  // "train" or "val"
  double error = 0.0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainLog {
  std::string family;
  std::uint64_t seed = 0;
  std::vector<LogRow> rows;

  std::string csv() const;
  // Latest row for (k, level, split); throws UsageError if absent.
  const LogRow& last(int k, int level, const std::string& split) const;
};

struct EvalResult {
  // Indexed [k-1][level-1].
  std::vector<std::vector<double>> error;
  std::vector<std::vector<double>> loss;
};

template <typename S>
EvalResult evaluate(AnytimeNetwork<S>& net, const Dataset& ds,
                    const std::vector<int>& indices, int batch_size);

// Joint anytime training: every batch takes one SGD step on the mean loss
// over all K sub-networks and all hierarchy levels. Width-nested families
// re-run the trunk once per sub-network inside a shared tape; channel-split
// families train every sub-network from a single pass. After each epoch both
// splits are evaluated and logged (the val split is skipped when empty).
// `on_epoch`, when set, runs after each epoch's rows are appended.
template <typename S>
TrainLog train_joint(AnytimeNetwork<S>& net, const Dataset& ds,
                     const std::vector<int>& train_idx, const std::vector<int>& val_idx,
                     const TrainConfig& cfg,
                     const std::function<void(int, const TrainLog&)>& on_epoch = nullptr);

}  // namespace anynet
