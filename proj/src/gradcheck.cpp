#include "anynet/gradcheck.hpp"

#include <cmath>
#include <random>

#include "anynet/train.hpp"

namespace anynet {

template <typename S>
GradCheckResult finite_diff_check(const std::function<Tensor<S>()>& fn,
                                  std::vector<Tensor<S>> points, double eps) {
  if (eps <= 0) throw UsageError("finite_diff_check: eps must be positive");
  for (Tensor<S>& p : points) {
    if (!p.is_leaf()) throw UsageError("finite_diff_check: points must be leaf tensors");
    p.set_requires_grad(true);
    p.zero_grad();
  }

  // Analytic pass.
  std::vector<std::vector<S>> analytic;
  {
    GradTape<S> tape;
    typename GradTape<S>::Scope scope(tape);
    Tensor<S> loss = fn();
    if (loss.numel() != 1) {
      throw UsageError("finite_diff_check: function must return a scalar");
    }
    tape.backward(loss);
    for (Tensor<S>& p : points) analytic.push_back(p.grad());
  }

  // Numeric passes: no tape active, so evaluations are pure forward.
  GradCheckResult result;
  for (std::size_t t = 0; t < points.size(); ++t) {
    Tensor<S>& p = points[t];
    std::vector<S>& v = p.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const S saved = v[i];
      v[i] = saved + static_cast<S>(eps);
      const double plus = static_cast<double>(fn().item());
      v[i] = saved - static_cast<S>(eps);
      const double minus = static_cast<double>(fn().item());
      v[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = static_cast<double>(analytic[t][i]);
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      ++result.coords_checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = detail::cat("tensor#", t, "[", i, "]");
      }
    }
  }
  return result;
}

template GradCheckResult finite_diff_check<float>(const std::function<Tensor<float>()>&,
                                                  std::vector<Tensor<float>>, double);
template GradCheckResult finite_diff_check<double>(const std::function<Tensor<double>()>&,
                                                   std::vector<Tensor<double>>, double);

namespace {

using T = Tensor<double>;

T rand_tensor(const Shape& shape, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return T::from_data(shape, v);
}

// Values pushed away from zero so relu kinks and max-pool ties stay clear of
// the finite-difference stencil.
T rand_signed_offset(const Shape& shape, Rng& rng) {
  std::uniform_real_distribution<double> mag(0.2, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  std::vector<double> v(n);
  for (auto& x : v) x = (sign(rng) ? 1.0 : -1.0) * mag(rng);
  return T::from_data(shape, v);
}

}  // namespace

std::vector<NamedCheck> gradient_battery(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<NamedCheck> out;
  auto run = [&](const std::string& name, const std::function<T()>& fn,
                 std::vector<T> points) {
    out.push_back({name, finite_diff_check<double>(fn, std::move(points))});
  };

  {
    T x = rand_tensor({2, 3, 6, 6}, rng, -1, 1);
    T w = rand_tensor({4, 3, 3, 3}, rng, -1, 1);
    run("conv2d", [=]() mutable { return sum(conv2d(x, w, 1, 1, 1)); }, {x, w});
  }
  {
    T x = rand_tensor({2, 4, 7, 7}, rng, -1, 1);
    T w = rand_tensor({6, 2, 3, 3}, rng, -1, 1);
    run("conv2d_grouped_strided",
        [=]() mutable { return sum(conv2d(x, w, 2, 0, 2)); }, {x, w});
  }
  {
    T x = rand_tensor({3, 5}, rng, -1, 1);
    T w = rand_tensor({4, 5}, rng, -1, 1);
    T b = rand_tensor({4}, rng, -1, 1);
    run("linear", [=]() mutable { return sum(linear(x, w, b)); }, {x, w, b});
  }
  {
    T x = rand_tensor({4, 3, 4, 4}, rng, -1, 1);
    auto state = std::make_shared<BatchNormState<double>>(BatchNormState<double>::init(3));
    state->gamma = rand_tensor({3}, rng, 0.5, 1.5);
    state->beta = rand_tensor({3}, rng, -0.5, 0.5);
    run("batch_norm_train",
        [=]() mutable { return sum(batch_norm(x, *state, Mode::Train)); },
        {x, state->gamma, state->beta});
  }
  {
    T x = rand_signed_offset({2, 3, 5, 5}, rng);
    run("relu", [=]() mutable { return sum(relu(x)); }, {x});
  }
  {
    T a = rand_tensor({2, 6}, rng, -1, 1);
    T b = rand_tensor({2, 6}, rng, -1, 1);
    run("add_mul_scale_sum",
        [=]() mutable { return sum(scale(mul(add(a, b), a), 0.5)); }, {a, b});
  }
  {
    T a = rand_tensor({2, 3, 4, 4}, rng, -1, 1);
    T b = rand_tensor({2, 2, 4, 4}, rng, -1, 1);
    run("concat_slice",
        [=]() mutable {
          T cat = channel_concat(std::vector<T>{a, b});
          return sum(mul(channel_slice(cat, 1, 3), channel_slice(cat, 1, 3)));
        },
        {a, b});
  }
  {
    T w = rand_tensor({6, 2, 3, 3}, rng, -1, 1);
    T x = rand_tensor({1, 2, 5, 5}, rng, -1, 1);
    run("slice_axis",
        [=]() mutable { return sum(conv2d(x, slice_axis(w, 0, 2, 3), 1, 0, 1)); }, {w, x});
  }
  {
    T x = rand_tensor({2, 3, 6, 6}, rng, -1, 1);
    run("avg_pool2d", [=]() mutable { return sum(mul(avg_pool2d(x, 2, 2), avg_pool2d(x, 2, 2))); },
        {x});
  }
  {
    T x = rand_signed_offset({2, 3, 6, 6}, rng);
    run("max_pool2d", [=]() mutable { return sum(max_pool2d(x, 2, 2)); }, {x});
  }
  {
    T x = rand_tensor({2, 4, 5, 5}, rng, -1, 1);
    run("global_avg_pool",
        [=]() mutable { return sum(mul(global_avg_pool(x), global_avg_pool(x))); }, {x});
  }
  {
    T x = rand_tensor({2, 4, 6, 6}, rng, -1, 1);
    run("downsample_shortcut",
        [=]() mutable {
          T d = downsample_shortcut(x, 8, 2);
          return sum(mul(d, d));
        },
        {x});
  }
  {
    T logits = rand_tensor({4, 5}, rng, -2, 2);
    std::vector<int> labels = {0, 3, 2, 4};
    run("softmax_cross_entropy",
        [=]() mutable { return softmax_cross_entropy(logits, labels); }, {logits});
  }
  {
    ArchConfig cfg;
    cfg.family = Family::InclusiveSparse;
    cfg.blocks = 1;
    cfg.width = 8;
    cfg.bottleneck = 1;
    cfg.subnetworks = 2;
    cfg.scales = 1;
    cfg.classes = 3;
    auto net = std::make_shared<AnytimeNetwork<double>>(build_network<double>(cfg, seed));
    T x = rand_tensor({2, 3, 8, 8}, rng, -1, 1);
    std::vector<std::vector<int>> labels = {{0, 2}};
    std::vector<T> points = net->parameters();
    points.push_back(x);
    run("end_to_end_joint_loss",
        [=]() mutable { return joint_loss(*net, x, labels, Mode::Train); },
        std::move(points));
  }
  return out;
}

}  // namespace anynet
