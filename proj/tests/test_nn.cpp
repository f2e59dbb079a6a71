#include <doctest.h>

#include <cmath>

#include "anynet/gradcheck.hpp"
#include "anynet/nn.hpp"
#include "oracles.hpp"

using namespace anynet;

namespace {
template <typename S>
Tensor<S> rand_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  auto vals = oracle::random_vec(rng, static_cast<size_t>(shape_numel(shape)), lo, hi);
  return Tensor<S>::from_data(std::move(shape), oracle::cast_vec<S>(vals));
}
}  // namespace

TEST_CASE("batch_norm train mode standardizes per channel") {
  Rng rng(70);
  auto x = rand_tensor<double>(rng, {4, 3, 5, 5}, -2.0, 5.0);
  auto st = BatchNormState<double>::init(3);
  auto y = batch_norm(x, st, Mode::Train);
  const int per = 4 * 5 * 5;
  for (int c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 25; ++i) m += y.values()[(n * 3 + c) * 25 + i];
    m /= per;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 25; ++i) {
        const double d = y.values()[(n * 3 + c) * 25 + i] - m;
        v += d * d;
      }
    v /= per;
    CHECK(std::abs(m) < 1e-10);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-3));  // eps in denominator
  }
}

TEST_CASE("batch_norm running statistics") {
  Rng rng(71);
  auto x = rand_tensor<double>(rng, {3, 2, 4, 4}, 0.0, 4.0);
  auto st = BatchNormState<double>::init(2);

  // Hand-compute the batch stats of channel 0.
  const int per = 3 * 16;
  double m = 0;
  for (int n = 0; n < 3; ++n)
    for (int i = 0; i < 16; ++i) m += x.values()[(n * 2) * 16 + i];
  m /= per;
  double v = 0;
  for (int n = 0; n < 3; ++n)
    for (int i = 0; i < 16; ++i) {
      const double d = x.values()[(n * 2) * 16 + i] - m;
      v += d * d;
    }
  const double biased = v / per;
  const double unbiased = v / (per - 1);

  batch_norm(x, st, Mode::Train);
  SUBCASE("one step blends with momentum and the unbiased correction") {
    CHECK(st.running_mean[0] == doctest::Approx(0.9 * 0.0 + 0.1 * m).epsilon(1e-12));
    CHECK(st.running_var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * unbiased).epsilon(1e-12));
    CHECK(st.running_var[0] != doctest::Approx(0.9 + 0.1 * biased).epsilon(1e-9));
  }
  SUBCASE("repeated identical batches converge geometrically at rate 1-momentum") {
    for (int step = 0; step < 60; ++step) batch_norm(x, st, Mode::Train);
    // After t steps: running = stat + (init - stat) * (1-momentum)^t.
    const double expect = m + (0.0 - m) * std::pow(0.9, 61);
    CHECK(st.running_mean[0] == doctest::Approx(expect).epsilon(1e-9));
    CHECK(st.running_mean[0] == doctest::Approx(m).epsilon(1e-2));
  }
}

TEST_CASE("batch_norm eval mode is pure and uses running stats") {
  Rng rng(72);
  auto x = rand_tensor<double>(rng, {2, 2, 3, 3});
  auto st = BatchNormState<double>::init(2);
  st.running_mean = {0.5, -0.5};
  st.running_var = {4.0, 0.25};
  auto saved_mean = st.running_mean;
  auto saved_var = st.running_var;
  auto y = batch_norm(x, st, Mode::Eval);
  CHECK(st.running_mean == saved_mean);
  CHECK(st.running_var == saved_var);
  // y = (x - rm)/sqrt(rv + eps) with gamma=1, beta=0.
  const double is0 = 1.0 / std::sqrt(4.0 + 1e-5);
  CHECK(y.values()[0] == doctest::Approx((x.values()[0] - 0.5) * is0).epsilon(1e-12));

  // Eval on a batch of one is fine; train is not.
  auto single = rand_tensor<double>(rng, {1, 2, 3, 3});
  CHECK_NOTHROW(batch_norm(single, st, Mode::Eval));
  CHECK_THROWS_AS(batch_norm(single, st, Mode::Train), UsageError);
}

TEST_CASE("batch_norm channel-offset slice touches only its slice") {
  Rng rng(73);
  auto st = BatchNormState<double>::init(6);
  st.gamma.values() = {1, 2, 3, 4, 5, 6};
  auto x = rand_tensor<double>(rng, {2, 2, 3, 3});
  auto before_mean = st.running_mean;
  auto y = batch_norm(x, st, Mode::Train, 2);  // channels [2,4)
  CHECK(y.dim(1) == 2);
  CHECK(st.running_mean[0] == before_mean[0]);
  CHECK(st.running_mean[2] != before_mean[2]);
  CHECK(st.running_mean[4] == before_mean[4]);
  CHECK_THROWS_AS(batch_norm(x, st, Mode::Train, 5), ConfigError);
}

TEST_CASE("batch_norm gradients check out in both modes") {
  Rng rng(74);
  auto x = rand_tensor<double>(rng, {3, 2, 4, 4}, -1.5, 2.0);
  auto st = BatchNormState<double>::init(2);
  st.gamma.values() = {1.2, 0.8};
  st.beta.values() = {0.1, -0.2};
  st.running_mean = {0.3, -0.1};
  st.running_var = {1.5, 0.7};

  SUBCASE("train mode") {
    auto snapshot_mean = st.running_mean;
    auto snapshot_var = st.running_var;
    auto fn = [&]() {
      // Keep the probe pure: restore running stats each evaluation.
      st.running_mean = snapshot_mean;
      st.running_var = snapshot_var;
      return sum(mul(batch_norm(x, st, Mode::Train), x));
    };
    auto r = finite_diff_check<double>(fn, {x, st.gamma, st.beta});
    CHECK(r.max_rel_error < 1e-6);
  }
  SUBCASE("eval mode") {
    auto fn = [&]() { return sum(mul(batch_norm(x, st, Mode::Eval), x)); };
    auto r = finite_diff_check<double>(fn, {x, st.gamma, st.beta});
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("msra_fill statistics and determinism") {
  SUBCASE("std matches sqrt(2/fan_in) within Monte-Carlo tolerance") {
    Rng rng(123);
    auto w = Tensor<double>::zeros({50, 8, 4, 4});  // 100k draws, fan_in 128
    msra_fill(w, rng);
    double m = 0;
    for (double v : w.values()) m += v;
    m /= w.numel();
    double var = 0;
    for (double v : w.values()) var += (v - m) * (v - m);
    var /= w.numel();
    const double expect_std = std::sqrt(2.0 / 128.0);
    CHECK(std::sqrt(var) == doctest::Approx(expect_std).epsilon(0.05));
    CHECK(std::abs(m) < 0.05 * expect_std + 1e-3);
  }
  SUBCASE("fan_in 2 gives roughly unit variance") {
    Rng rng(124);
    auto w = Tensor<double>::zeros({50000, 2});
    msra_fill(w, rng);
    double var = 0;
    for (double v : w.values()) var += v * v;
    var /= w.numel();
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));
  }
  SUBCASE("same seed, same weights") {
    Rng r1(9), r2(9);
    auto a = Tensor<float>::zeros({4, 4, 3, 3});
    auto b = Tensor<float>::zeros({4, 4, 3, 3});
    msra_fill(a, r1);
    msra_fill(b, r2);
    CHECK(a.values() == b.values());
  }
}

TEST_CASE("downsample_shortcut pools and zero-fills") {
  Rng rng(75);
  SUBCASE("ungrouped: averages then appends zero channels") {
    auto x = Tensor<double>::from_data(
        {1, 1, 2, 2}, {1.0, 3.0, 5.0, 7.0});
    auto y = downsample_shortcut(x, 3, 1);
    CHECK(y.shape() == Shape{1, 3, 1, 1});
    CHECK(y.values()[0] == doctest::Approx(4.0));
    CHECK(y.values()[1] == 0.0);
    CHECK(y.values()[2] == 0.0);
  }
  SUBCASE("grouped: zeros interleave per group") {
    auto x = rand_tensor<double>(rng, {2, 4, 4, 4});
    auto y = downsample_shortcut(x, 8, 2);  // groups of 2 -> groups of 4
    CHECK(y.shape() == Shape{2, 8, 2, 2});
    // Group 0 output channels: [pool(ch0), pool(ch1), 0, 0]; group 1: [pool(ch2), pool(ch3), 0, 0]
    auto pooled = avg_pool2d(x, 2, 2);
    for (int n = 0; n < 2; ++n) {
      for (int i = 0; i < 4; ++i) {
        CHECK(y.values()[(n * 8 + 0) * 4 + i] == pooled.values()[(n * 4 + 0) * 4 + i]);
        CHECK(y.values()[(n * 8 + 2) * 4 + i] == 0.0);
        CHECK(y.values()[(n * 8 + 3) * 4 + i] == 0.0);
        CHECK(y.values()[(n * 8 + 4) * 4 + i] == pooled.values()[(n * 4 + 2) * 4 + i]);
        CHECK(y.values()[(n * 8 + 6) * 4 + i] == 0.0);
      }
    }
  }
  SUBCASE("width checks") {
    auto x = Tensor<double>::zeros({1, 4, 4, 4});
    CHECK_THROWS_AS(downsample_shortcut(x, 2, 1), ConfigError);
    CHECK_THROWS_AS(downsample_shortcut(x, 6, 4), ConfigError);
  }
}
