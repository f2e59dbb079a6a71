#include "anynet/runner.hpp"

#include <sstream>

#include "anynet/ops.hpp"

namespace anynet {

int restrict_to_budget(const FlopsReport& report, std::uint64_t budget_units) {
  const std::uint64_t cheapest = report.at(1).total;
  if (budget_units < cheapest)
    throw BudgetError(detail::cat("budget of ", budget_units,
                                  " units is below the cheapest sub-network (",
                                  cheapest, " units)"),
                      cheapest);
  int best = 1;
  const int K = static_cast<int>(report.subnetworks.size());
  for (int k = 2; k <= K; ++k)
    if (report.at(k).total <= budget_units) best = k;
  return best;
}

template <typename S>
std::vector<int> classify(AnytimeNetwork<S>& net, const Tensor<S>& x, int k, int level) {
  return argmax_rows(forward(net, x, k, Mode::Eval, level));
}

template <typename S>
InterruptibleStream<S>::InterruptibleStream(AnytimeNetwork<S>& net, const Tensor<S>& x)
    : net_(net), input_(x) {
  if (net.cfg.family == Family::Inclusive)
    throw UsageError(
        "width-nested sub-networks cannot stream: widening re-runs the trunk "
        "instead of extending it");
  if (net.cfg.family == Family::InclusiveSparse) {
    u_.resize(static_cast<std::size_t>(net.cfg.blocks));
  }
}

template <typename S>
typename InterruptibleStream<S>::Step InterruptibleStream<S>::advance() {
  if (done())
    throw UsageError(detail::cat("all ", total_steps(), " steps already computed"));
  return net_.cfg.family == Family::InclusiveSparse ? advance_sparse() : advance_shallow();
}

template <typename S>
typename InterruptibleStream<S>::Step InterruptibleStream<S>::finish(
    int k, Tensor<S> feat, const CostCounter& counter) {
  Step step;
  step.k = k;
  {
    CostCounter heads;
    CostScope scope(heads);
    for (int d = 1; d <= net_.cfg.levels(); ++d)
      step.logits.push_back(head_logits(net_, k, d, feat, Mode::Eval));
    step.step_units = counter.total() + heads.total();
  }
  total_units_ += step.step_units;
  step.total_units = total_units_;
  k_ = k;
  last_ = step;
  return step;
}

// Extends every block by one channel group. A group's new work reads the
// cached post-normalization activations of earlier groups (`u_`), so each
// step charges exactly the audited cost difference between sub-networks k
// and k-1, and the resulting features match a from-scratch restricted pass
// bit for bit.
template <typename S>
typename InterruptibleStream<S>::Step InterruptibleStream<S>::advance_sparse() {
  const int g = k_ + 1;
  const int K = net_.cfg.subnetworks;
  CostCounter counter;
  Tensor<S> feat;
  {
    CostScope scope(counter);
    const int w0 = net_.group_width(0);
    Tensor<S> sw = slice_axis(net_.stem.weight, 0, (g - 1) * w0, w0);
    Tensor<S> xg = conv2d(input_, sw, net_.stem.stride, net_.stem.padding, 1);
    if (net_.stem_pool) xg = max_pool2d(xg, 2, 2);

    int prev_scale = 0;
    for (int b = 0; b < net_.cfg.blocks; ++b) {
      const int s = net_.scale_of_block(b);
      if (s != prev_scale) {
        // Per-group pooled shortcut: pool this group's channels, zero-fill
        // the widened remainder (the slice the grouped transition gives it).
        xg = downsample_shortcut(xg, net_.group_width(s), 1);
        prev_scale = s;
      }
      SparseBlock<S>& blk = net_.sblocks[static_cast<std::size_t>(b)];
      const int Bs = blk.spatial.weight.dim(1);
      const int per_group = blk.reduce[0].weight.dim(0);  // (C/K)*Bs
      const int w = blk.bn_in.channels / K;

      Tensor<S> ug = relu(batch_norm(xg, blk.bn_in, Mode::Eval, (g - 1) * w));
      std::vector<Tensor<S>>& ucache = u_;
      ucache[static_cast<std::size_t>(b)] =
          g == 1 ? ug
                 : channel_concat(
                       std::vector<Tensor<S>>{ucache[static_cast<std::size_t>(b)], ug});
      Tensor<S> part =
          conv2d(ucache[static_cast<std::size_t>(b)], blk.reduce[g - 1].weight, 1, 0, 1);
      Tensor<S> m = relu(batch_norm(part, blk.bn_mid, Mode::Eval, (g - 1) * per_group));
      Tensor<S> spw = slice_axis(blk.spatial.weight, 0, (g - 1) * per_group, per_group);
      Tensor<S> sp = conv2d(m, spw, 1, 1, per_group / Bs);
      Tensor<S> o = relu(batch_norm(sp, blk.bn_out, Mode::Eval, (g - 1) * per_group));
      Tensor<S> ew = slice_axis(blk.expand.weight, 0, (g - 1) * w, w);
      Tensor<S> y = conv2d(o, ew, 1, 0, 1);
      xg = add(xg, y);
    }
    tap_ = g == 1 ? xg : channel_concat(std::vector<Tensor<S>>{tap_, xg});
    feat = tap_;
  }
  return finish(g, feat, counter);
}

// Shallow exits (and the single-exit plain family): each step runs only the
// blocks between the previous exit and this one.
template <typename S>
typename InterruptibleStream<S>::Step InterruptibleStream<S>::advance_shallow() {
  const int k = k_ + 1;
  const int upto = net_.exit_block_of(k);
  CostCounter counter;
  {
    CostScope scope(counter);
    if (k_ == 0) tap_ = stem_forward(net_, input_, total_steps());
    tap_ = run_blocks(net_, tap_, blocks_done_, upto, total_steps(), Mode::Eval);
    blocks_done_ = upto;
  }
  return finish(k, tap_, counter);
}

template <typename S>
const typename InterruptibleStream<S>::Step& InterruptibleStream<S>::best() const {
  if (k_ == 0) throw UsageError("no sub-network computed yet; call advance() first");
  return last_;
}

std::string anytime_curve_csv(const FlopsReport& report,
                              const std::vector<std::vector<double>>& error) {
  const int K = static_cast<int>(report.subnetworks.size());
  if (static_cast<int>(error.size()) != K)
    throw UsageError(detail::cat("error table has ", error.size(), " rows, report audits ",
                                 K, " sub-networks"));
  std::ostringstream out;
  out << "k,level,flops,error\n";
  for (int k = 1; k <= K; ++k) {
    const auto& row = error[static_cast<std::size_t>(k - 1)];
    for (std::size_t d = 0; d < row.size(); ++d)
      out << k << ',' << d + 1 << ',' << report.at(k).total << ',' << row[d] << "\n";
  }
  return out.str();
}

#define ANYNET_INSTANTIATE_RUNNER(S)                                                \
  template class InterruptibleStream<S>;                                            \
  template std::vector<int> classify<S>(AnytimeNetwork<S>&, const Tensor<S>&, int, int);

ANYNET_INSTANTIATE_RUNNER(float)
ANYNET_INSTANTIATE_RUNNER(double)

}  // namespace anynet
