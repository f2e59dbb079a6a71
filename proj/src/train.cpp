#include "anynet/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace anynet {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError(detail::cat("epochs must be >= 0, got ", epochs));
  if (batch_size < 2)
    throw ConfigError(detail::cat("batch_size must be >= 2 (batch statistics), got ",
                                  batch_size));
  if (base_lr <= 0.0) throw ConfigError(detail::cat("base_lr must be > 0, got ", base_lr));
  if (momentum < 0.0 || momentum >= 1.0)
    throw ConfigError(detail::cat("momentum must lie in [0, 1), got ", momentum));
  if (weight_decay < 0.0)
    throw ConfigError(detail::cat("weight_decay must be >= 0, got ", weight_decay));
  if (divergence_cap <= 0.0)
    throw ConfigError(detail::cat("divergence_cap must be > 0, got ", divergence_cap));
}

double lr_at(const TrainConfig& cfg, int epoch) {
  if (epoch < 0 || epoch >= cfg.epochs)
    throw UsageError(detail::cat("epoch ", epoch, " outside [0, ", cfg.epochs, ")"));
  double lr = cfg.base_lr;
  if (epoch >= cfg.epochs / 2) lr /= 10.0;
  if (epoch >= 3 * cfg.epochs / 4) lr /= 10.0;
  return lr;
}

template <typename S>
SgdState<S>::SgdState(const std::vector<Tensor<S>>& params) {
  velocity.reserve(params.size());
  for (const Tensor<S>& p : params) velocity.emplace_back(p.numel(), S(0));
}

template <typename S>
void SgdState<S>::step(std::vector<Tensor<S>>& params, double lr, double momentum,
                       double weight_decay) {
  if (params.size() != velocity.size())
    throw UsageError(detail::cat("optimizer tracks ", velocity.size(),
                                 " parameters but was given ", params.size()));
  const S m = static_cast<S>(momentum);
  const S wd = static_cast<S>(weight_decay);
  const S rate = static_cast<S>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<S>& p = params[i];
    const std::vector<S>* grad = p.grad_if();
    if (grad == nullptr) continue;  // untouched this step
    if (grad->size() != velocity[i].size())
      throw UsageError(detail::cat("parameter ", i, " gradient size mismatch"));
    std::vector<S>& vals = p.values();
    std::vector<S>& v = velocity[i];
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const S g = (*grad)[j] + wd * vals[j];
      v[j] = m * v[j] + g;
      vals[j] -= rate * (g + m * v[j]);
    }
  }
}

template <typename S>
Tensor<S> joint_loss(AnytimeNetwork<S>& net, const Tensor<S>& x,
                     const std::vector<std::vector<int>>& labels_by_level, Mode mode,
                     std::vector<std::vector<Tensor<S>>>* outs) {
  const int levels = net.cfg.levels();
  if (static_cast<int>(labels_by_level.size()) != levels)
    throw UsageError(detail::cat("got labels for ", labels_by_level.size(),
                                 " levels, network has ", levels));
  auto logits = forward_all(net, x, mode);
  const int K = static_cast<int>(logits.size());
  const S w = S(1) / static_cast<S>(K * levels);
  Tensor<S> total;
  bool first = true;
  for (int k = 0; k < K; ++k) {
    for (int d = 0; d < levels; ++d) {
      Tensor<S> term = scale(
          softmax_cross_entropy(logits[static_cast<std::size_t>(k)][static_cast<std::size_t>(d)],
                                labels_by_level[static_cast<std::size_t>(d)]),
          w);
      total = first ? term : add(total, term);
      first = false;
    }
  }
  if (outs != nullptr) *outs = std::move(logits);
  return total;
}

std::string TrainLog::csv() const {
  std::ostringstream out;
  out << "# family=" << family << " seed=" << seed << "\n";
  out << "epoch,k,level,split,error,loss,lr\n";
  for (const LogRow& r : rows) {
    out << r.epoch << ',' << r.k << ',' << r.level << ',' << r.split << ','
        << std::setprecision(6) << std::fixed << r.error << ','
        << std::defaultfloat << std::setprecision(8) << r.loss << ','
        << std::setprecision(6) << r.lr << "\n";
  }
  return out.str();
}

const LogRow& TrainLog::last(int k, int level, const std::string& split) const {
  for (auto it = rows.rbegin(); it != rows.rend(); ++it)
    if (it->k == k && it->level == level && it->split == split) return *it;
  throw UsageError(detail::cat("no log row for k=", k, " level=", level, " split=", split));
}

namespace {

void fisher_yates(std::vector<int>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

std::vector<std::vector<int>> labels_for(const Dataset& ds, const std::vector<int>& chunk,
                                         int levels) {
  std::vector<std::vector<int>> out;
  out.reserve(static_cast<std::size_t>(levels));
  for (int d = 1; d <= levels; ++d) out.push_back(batch_labels(ds, chunk, d));
  return out;
}

}  // namespace

template <typename S>
EvalResult evaluate(AnytimeNetwork<S>& net, const Dataset& ds,
                    const std::vector<int>& indices, int batch_size) {
  if (indices.empty()) throw UsageError("cannot evaluate on an empty index list");
  if (batch_size < 1) throw UsageError("evaluation batch size must be >= 1");
  const int K = net.cfg.subnetworks;
  const int D = net.cfg.levels();
  EvalResult res;
  res.error.assign(static_cast<std::size_t>(K), std::vector<double>(static_cast<std::size_t>(D), 0.0));
  res.loss = res.error;

  Rng unused(0);  // the eval path never draws from it
  for (std::size_t start = 0; start < indices.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(indices.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<int> chunk(indices.begin() + static_cast<std::ptrdiff_t>(start),
                           indices.begin() + static_cast<std::ptrdiff_t>(stop));
    Tensor<S> x = make_batch<S>(ds, chunk, false, unused, ds.stats);
    auto labels = labels_for(ds, chunk, D);
    auto logits = forward_all(net, x, Mode::Eval);
    for (int k = 0; k < K; ++k) {
      for (int d = 0; d < D; ++d) {
        const Tensor<S>& lg = logits[static_cast<std::size_t>(k)][static_cast<std::size_t>(d)];
        const std::vector<int> pred = argmax_rows(lg);
        int wrong = 0;
        for (std::size_t i = 0; i < chunk.size(); ++i)
          if (pred[i] != labels[static_cast<std::size_t>(d)][i]) ++wrong;
        res.error[static_cast<std::size_t>(k)][static_cast<std::size_t>(d)] += wrong;
        res.loss[static_cast<std::size_t>(k)][static_cast<std::size_t>(d)] +=
            static_cast<double>(softmax_cross_entropy(lg, labels[static_cast<std::size_t>(d)])
                                    .item()) *
            static_cast<double>(chunk.size());
      }
    }
  }
  const double n = static_cast<double>(indices.size());
  for (int k = 0; k < K; ++k)
    for (int d = 0; d < D; ++d) {
      res.error[static_cast<std::size_t>(k)][static_cast<std::size_t>(d)] /= n;
      res.loss[static_cast<std::size_t>(k)][static_cast<std::size_t>(d)] /= n;
    }
  return res;
}

template <typename S>
TrainLog train_joint(AnytimeNetwork<S>& net, const Dataset& ds,
                     const std::vector<int>& train_idx, const std::vector<int>& val_idx,
                     const TrainConfig& cfg,
                     const std::function<void(int, const TrainLog&)>& on_epoch) {
  cfg.validate();
  if (ds.classes != net.cfg.classes)
    throw ConfigError(detail::cat("dataset has ", ds.classes, " classes, network expects ",
                                  net.cfg.classes));
  const int D = net.cfg.levels();
  if (D > 1) {
    if (ds.hierarchy.levels < D)
      throw ConfigError(detail::cat("network trains ", D, " levels but the dataset labels ",
                                    ds.hierarchy.levels));
    for (int d = 1; d <= D; ++d)
      if (ds.hierarchy.level_classes[static_cast<std::size_t>(d - 1)] !=
          net.cfg.classes_at_level(d))
        throw ConfigError(detail::cat("level ", d, ": dataset has ",
                                      ds.hierarchy.level_classes[static_cast<std::size_t>(d - 1)],
                                      " classes, network expects ", net.cfg.classes_at_level(d)));
  }
  if (train_idx.empty()) throw UsageError("no training samples selected");

  std::vector<Tensor<S>> params = net.parameters();
  // Leaves do not record gradients until asked; without this, backward()
  // would silently skip every conv and fc weight and SGD would only ever
  // touch the BN affine terms.
  for (Tensor<S>& p : params) p.set_requires_grad(true);
  SgdState<S> opt(params);
  TrainLog log;
  log.family = family_to_string(net.cfg.family);
  log.seed = cfg.seed;

  Rng rng(cfg.seed);
  std::vector<int> order = train_idx;
  const int K = net.cfg.subnetworks;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg, epoch);
    fisher_yates(order, rng);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      if (stop - start < 2) break;  // batch statistics need at least two samples
      std::vector<int> chunk(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(stop));
      Tensor<S> x = make_batch<S>(ds, chunk, cfg.augment, rng, ds.stats);
      auto labels = labels_for(ds, chunk, D);

      for (Tensor<S>& p : params) p.zero_grad();
      GradTape<S> tape;
      typename GradTape<S>::Scope scope(tape);
      Tensor<S> loss = joint_loss(net, x, labels, Mode::Train);
      const double lval = static_cast<double>(loss.item());
      if (!std::isfinite(lval) || lval > cfg.divergence_cap)
        throw NumericError(detail::cat("training diverged at epoch ", epoch + 1, ": loss ",
                                       lval));
      tape.backward(loss);
      opt.step(params, lr, cfg.momentum, cfg.weight_decay);
    }

    auto append = [&](const std::string& split, const EvalResult& res) {
      for (int k = 1; k <= K; ++k)
        for (int d = 1; d <= D; ++d)
          log.rows.push_back({epoch + 1, k, d, split,
                              res.error[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(d - 1)],
                              res.loss[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(d - 1)],
                              lr});
    };
    append("train", evaluate(net, ds, train_idx, cfg.batch_size));
    if (!val_idx.empty()) append("val", evaluate(net, ds, val_idx, cfg.batch_size));
    if (on_epoch) on_epoch(epoch + 1, log);
  }
  return log;
}

#define ANYNET_INSTANTIATE_TRAIN(S)                                                        \
  template struct SgdState<S>;                                                             \
  template Tensor<S> joint_loss<S>(AnytimeNetwork<S>&, const Tensor<S>&,                   \
                                   const std::vector<std::vector<int>>&, Mode,             \
                                   std::vector<std::vector<Tensor<S>>>*);                  \
  template EvalResult evaluate<S>(AnytimeNetwork<S>&, const Dataset&,                      \
                                  const std::vector<int>&, int);                           \
  template TrainLog train_joint<S>(AnytimeNetwork<S>&, const Dataset&,                     \
                                   const std::vector<int>&, const std::vector<int>&,       \
                                   const TrainConfig&,                                     \
                                   const std::function<void(int, const TrainLog&)>&);

ANYNET_INSTANTIATE_TRAIN(float)
ANYNET_INSTANTIATE_TRAIN(double)

}  // namespace anynet
