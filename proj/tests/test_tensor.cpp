#include <doctest.h>

#include <cmath>
#include <random>

#include "anynet/gradcheck.hpp"
#include "anynet/ops.hpp"
#include "oracles.hpp"

using namespace anynet;

namespace {

template <typename S>
Tensor<S> rand_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  auto vals = oracle::random_vec(rng, static_cast<size_t>(shape_numel(shape)), lo, hi);
  return Tensor<S>::from_data(std::move(shape), oracle::cast_vec<S>(vals));
}

template <typename S>
double max_abs_diff(const std::vector<S>& a, const std::vector<S>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace

TEST_CASE("tensor factories and accessors") {
  auto t = Tensor<float>::zeros({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.is_leaf());
  CHECK_FALSE(t.requires_grad());
  for (float v : t.values()) CHECK(v == 0.0f);

  auto s = Tensor<float>::scalar(4.0f);
  CHECK(s.item() == 4.0f);
  CHECK_THROWS_AS(t.item(), UsageError);
  CHECK_THROWS_AS(Tensor<float>::from_data({2, 2}, {1.0f}), ConfigError);
}

TEST_CASE("conv2d: 1x1 per-channel identity weight leaves input unchanged") {
  Rng rng(11);
  auto x = rand_tensor<float>(rng, {2, 4, 5, 5});
  // groups == channels, one tap each, weight 1.
  auto w = Tensor<float>::full({4, 1, 1, 1}, 1.0f);
  auto y = conv2d(x, w, 1, 0, 4);
  CHECK(y.shape() == x.shape());
  CHECK(max_abs_diff(y.values(), x.values()) == 0.0);
}

TEST_CASE("conv2d: all-ones 3x3 kernel sums the neighborhood") {
  auto x = Tensor<float>::full({1, 1, 5, 5}, 1.0f);
  auto w = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
  auto y = conv2d(x, w, 1, 1, 1);
  CHECK(y.dim(2) == 5);
  // Interior positions see the full 3x3 window.
  for (int iy = 1; iy < 4; ++iy)
    for (int ix = 1; ix < 4; ++ix) CHECK(y.values()[iy * 5 + ix] == doctest::Approx(9.0f));
  // Corner sees a 2x2 window.
  CHECK(y.values()[0] == doctest::Approx(4.0f));
}

TEST_CASE("conv2d matches the literal oracle over random configurations") {
  Rng rng(1234);
  struct Cfg { int N, C, H, W, O, k, stride, pad, groups; };
  std::vector<Cfg> cfgs = {
      {2, 6, 9, 9, 9, 3, 1, 1, 3},  {1, 8, 8, 8, 8, 1, 1, 0, 4},
      {3, 4, 7, 6, 6, 3, 2, 1, 2},  {2, 5, 5, 5, 7, 5, 1, 2, 1},
      {1, 12, 6, 6, 6, 3, 1, 1, 6}, {2, 3, 11, 11, 4, 7, 2, 3, 1},
  };
  for (const auto& c : cfgs) {
    CAPTURE(c.C); CAPTURE(c.O); CAPTURE(c.groups); CAPTURE(c.k);
    auto x = rand_tensor<double>(rng, {c.N, c.C, c.H, c.W});
    auto w = rand_tensor<double>(rng, {c.O, c.C / c.groups, c.k, c.k});
    auto y = conv2d(x, w, c.stride, c.pad, c.groups);
    int OH = 0, OW = 0;
    auto ref = oracle::conv2d(x.values(), c.N, c.C, c.H, c.W, w.values(), c.O, c.k,
                              c.k, c.stride, c.pad, c.groups, &OH, &OW);
    CHECK(y.dim(2) == OH);
    CHECK(y.dim(3) == OW);
    CHECK(max_abs_diff(y.values(), ref) < 1e-12);
  }
}

TEST_CASE("grouped conv equals per-group dense convs on channel slices") {
  Rng rng(99);
  const int N = 2, C = 6, H = 5, W = 5, O = 9, groups = 3;
  auto x = rand_tensor<double>(rng, {N, C, H, W});
  auto w = rand_tensor<double>(rng, {O, C / groups, 3, 3});
  auto y = conv2d(x, w, 1, 1, groups);
  std::vector<Tensor<double>> pieces;
  for (int g = 0; g < groups; ++g) {
    auto xg = channel_slice(x, g * (C / groups), C / groups);
    auto wg = slice_axis(w, 0, g * (O / groups), O / groups);
    pieces.push_back(conv2d(xg, wg, 1, 1, 1));
  }
  auto ref = channel_concat(pieces);
  CHECK(max_abs_diff(y.values(), ref.values()) == 0.0);
}

namespace {
template <typename Fn>
std::string config_error_message(Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}
}  // namespace

TEST_CASE("conv2d shape errors name the offending dimension") {
  auto x = Tensor<float>::zeros({1, 4, 5, 5});
  auto w = Tensor<float>::zeros({6, 2, 3, 3});  // expects in/groups == 4 for groups=1
  auto msg = config_error_message([&] { conv2d(x, w, 1, 1, 1); });
  CHECK(msg.find("weight in-channel extent 2") != std::string::npos);
  auto w2 = Tensor<float>::zeros({5, 4, 3, 3});
  msg = config_error_message([&] { conv2d(x, w2, 1, 1, 3); });
  CHECK(msg.find("channels 4 not divisible by groups 3") != std::string::npos);
  auto w3 = Tensor<float>::zeros({4, 4, 9, 9});
  CHECK_THROWS_AS(conv2d(x, w3, 1, 0, 1), ConfigError);
}

TEST_CASE("core op identities") {
  Rng rng(5);
  SUBCASE("cross-entropy of uniform logits is ln(classes)") {
    auto logits = Tensor<double>::full({3, 4}, 0.7);
    auto loss = softmax_cross_entropy(logits, {0, 1, 3});
    CHECK(loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("cross-entropy matches explicit-softmax oracle") {
    auto logits = rand_tensor<double>(rng, {5, 7});
    std::vector<int> labels = {0, 6, 3, 2, 2};
    auto loss = softmax_cross_entropy(logits, labels);
    CHECK(loss.item() ==
          doctest::Approx(oracle::cross_entropy(logits.values(), 5, 7, labels)).epsilon(1e-10));
  }
  SUBCASE("label out of range is a data error") {
    auto logits = Tensor<double>::zeros({2, 3});
    CHECK_THROWS_AS(softmax_cross_entropy(logits, {0, 3}), DataError);
    CHECK_THROWS_AS(softmax_cross_entropy(logits, {0}), UsageError);
  }
  SUBCASE("global average pool of a constant is that constant") {
    auto x = Tensor<double>::full({2, 3, 4, 4}, 2.5);
    auto y = global_avg_pool(x);
    CHECK(y.shape() == Shape{2, 3});
    for (double v : y.values()) CHECK(v == doctest::Approx(2.5));
  }
  SUBCASE("linear with identity weight and zero bias reproduces the input") {
    auto x = rand_tensor<double>(rng, {3, 4});
    std::vector<double> eye(16, 0.0);
    for (int i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
    auto w = Tensor<double>::from_data({4, 4}, eye);
    auto b = Tensor<double>::zeros({4});
    auto y = linear(x, w, b);
    CHECK(max_abs_diff(y.values(), x.values()) < 1e-15);
  }
  SUBCASE("relu clamps negatives") {
    auto x = Tensor<double>::from_data({4}, {-1.0, 0.0, 0.5, 2.0});
    auto y = relu(x);
    CHECK(y.values() == std::vector<double>{0.0, 0.0, 0.5, 2.0});
  }
}

TEST_CASE("channel concat/split round-trips") {
  Rng rng(7);
  auto x = rand_tensor<float>(rng, {2, 6, 3, 3});
  auto parts = channel_split(x, 3);
  auto back = channel_concat(parts);
  CHECK(back.shape() == x.shape());
  CHECK(max_abs_diff(back.values(), x.values()) == 0.0);
}

TEST_CASE("pooling") {
  auto x = Tensor<double>::from_data({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  auto a = avg_pool2d(x, 2, 2);
  CHECK(a.item() == doctest::Approx(2.5));
  auto m = max_pool2d(x, 2, 2);
  CHECK(m.item() == doctest::Approx(4.0));
}

TEST_CASE("backward: d(sum(w*x))/dw equals x") {
  Rng rng(21);
  auto x = rand_tensor<double>(rng, {3, 5});
  auto w = rand_tensor<double>(rng, {3, 5});
  w.set_requires_grad(true);
  GradTape<double> tape;
  {
    GradTape<double>::Scope scope(tape);
    auto loss = sum(mul(w, x));
    size_t visited = tape.backward(loss);
    CHECK(visited == tape.size());
  }
  CHECK(max_abs_diff(w.grad(), x.values()) < 1e-15);
}

TEST_CASE("backward: relu subgradient at exactly zero is zero") {
  auto x = Tensor<double>::from_data({3}, {-1.0, 0.0, 2.0});
  x.set_requires_grad(true);
  GradTape<double> tape;
  {
    GradTape<double>::Scope scope(tape);
    auto loss = sum(relu(x));
    tape.backward(loss);
  }
  CHECK(x.grad() == std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("backward: gradients accumulate additively across losses") {
  Rng rng(31);
  auto w = rand_tensor<double>(rng, {4});
  w.set_requires_grad(true);
  auto x1 = rand_tensor<double>(rng, {4});
  auto x2 = rand_tensor<double>(rng, {4});

  // Sequential backward on two losses...
  GradTape<double> tape;
  {
    GradTape<double>::Scope scope(tape);
    auto l1 = sum(mul(w, x1));
    auto l2 = sum(mul(w, x2));
    tape.backward(l1);
    tape.backward(l2);
  }
  auto sequential = w.grad();

  // ...equals backward on their sum.
  w.zero_grad();
  GradTape<double> tape2;
  {
    GradTape<double>::Scope scope(tape2);
    auto l = add(sum(mul(w, x1)), sum(mul(w, x2)));
    tape2.backward(l);
  }
  CHECK(max_abs_diff(sequential, w.grad()) < 1e-14);

  // Same loss twice doubles the leaf gradient.
  w.zero_grad();
  GradTape<double> tape3;
  {
    GradTape<double>::Scope scope(tape3);
    auto l = sum(mul(w, x1));
    tape3.backward(l);
    tape3.backward(l);
  }
  for (size_t i = 0; i < 4; ++i)
    CHECK(w.grad()[i] == doctest::Approx(2.0 * x1.values()[i]).epsilon(1e-12));
}

TEST_CASE("backward: parameters off the loss path get zero gradient") {
  Rng rng(41);
  auto used = rand_tensor<double>(rng, {3});
  auto unused = rand_tensor<double>(rng, {3});
  used.set_requires_grad(true);
  unused.set_requires_grad(true);
  GradTape<double> tape;
  {
    GradTape<double>::Scope scope(tape);
    auto l = sum(used);
    // unused participates in a computation that does not feed the loss
    auto dead = sum(unused);
    (void)dead;
    tape.backward(l);
  }
  for (double g : unused.grad()) CHECK(g == 0.0);
}

TEST_CASE("backward usage errors") {
  auto x = Tensor<double>::zeros({2, 2});
  GradTape<double> tape;
  CHECK_THROWS_AS(tape.backward(x), UsageError);
  // Scalar produced under a *different* tape is rejected.
  GradTape<double> other;
  Tensor<double> foreign;
  {
    GradTape<double>::Scope scope(other);
    foreign = sum(Tensor<double>::full({2}, 1.0));
  }
  CHECK_THROWS_AS(tape.backward(foreign), UsageError);
}

TEST_CASE("tape records are topologically ordered and replayed once") {
  Rng rng(51);
  auto x = rand_tensor<double>(rng, {1, 4, 6, 6});
  auto w = rand_tensor<double>(rng, {4, 4, 3, 3});
  w.set_requires_grad(true);
  GradTape<double> tape;
  {
    GradTape<double>::Scope scope(tape);
    auto h = relu(conv2d(x, w, 1, 1, 1));
    auto p = global_avg_pool(h);
    auto l = sum(p);
    CHECK(tape.size() == 4);
    for (const auto& rec : tape.records_view()) {
      for (auto in : rec.input_ids) CHECK(in < rec.output_id);
    }
    CHECK(tape.backward(l) == tape.size());
  }
}

TEST_CASE("no active tape means pure forward with detached outputs") {
  Rng rng(61);
  auto x = rand_tensor<double>(rng, {1, 2, 4, 4});
  auto y = relu(x);
  CHECK(y.is_leaf());
  CHECK_FALSE(y.requires_grad());
  CHECK(GradTape<double>::current() == nullptr);
}

TEST_CASE("determinism: identical seeds give identical draws") {
  Rng a(77), b(77);
  auto v1 = oracle::random_vec(a, 64);
  auto v2 = oracle::random_vec(b, 64);
  CHECK(v1 == v2);
}

TEST_CASE("finite_diff_check calibration") {
  SUBCASE("simple quadratic is matched to ~1e-8") {
    auto w = Tensor<double>::from_data({3}, {0.3, -0.7, 1.1});
    auto result = finite_diff_check<double>(
        [&]() { return sum(mul(w, w)); }, {w}, 1e-5);
    CHECK(result.max_rel_error < 1e-8);
    CHECK(result.coords_checked == 3);
  }
  SUBCASE("constant function has zero error") {
    auto w = Tensor<double>::from_data({2}, {1.0, 2.0});
    auto c = Tensor<double>::scalar(3.0);
    auto result = finite_diff_check<double>([&]() { return sum(c); }, {w}, 1e-5);
    CHECK(result.max_rel_error == 0.0);
  }
}

TEST_CASE("composite conv -> relu -> pool -> linear -> CE gradient checks out") {
  Rng rng(2024);
  auto x = rand_tensor<double>(rng, {2, 3, 6, 6});
  auto w = rand_tensor<double>(rng, {4, 3, 3, 3}, -0.5, 0.5);
  auto fcw = rand_tensor<double>(rng, {3, 4}, -0.5, 0.5);
  auto fcb = rand_tensor<double>(rng, {3}, -0.1, 0.1);
  std::vector<int> labels = {0, 2};
  auto fn = [&]() {
    auto h = global_avg_pool(relu(conv2d(x, w, 1, 1, 1)));
    return softmax_cross_entropy(linear(h, fcw, fcb), labels);
  };
  auto result = finite_diff_check<double>(fn, {x, w, fcw, fcb}, 1e-5);
  CHECK(result.max_rel_error < 1e-4);
}

TEST_CASE("per-operator finite difference checks") {
  Rng rng(3000);
  // Shifted relu input so no coordinate sits at the kink.
  auto x = rand_tensor<double>(rng, {2, 4, 5, 5});
  for (auto& v : x.values())
    if (std::abs(v) < 1e-3) v += 0.01;

  SUBCASE("grouped strided padded conv") {
    auto w = rand_tensor<double>(rng, {8, 2, 3, 3});
    auto r = finite_diff_check<double>(
        [&]() { return sum(conv2d(x, w, 2, 1, 2)); }, {x, w});
    CHECK(r.max_rel_error < 1e-6);
  }
  SUBCASE("relu") {
    auto r = finite_diff_check<double>([&]() { return sum(relu(x)); }, {x});
    CHECK(r.max_rel_error < 1e-6);
  }
  SUBCASE("avg pool") {
    auto r = finite_diff_check<double>([&]() { return sum(avg_pool2d(x, 2, 2)); }, {x});
    CHECK(r.max_rel_error < 1e-6);
  }
  SUBCASE("max pool") {
    auto r = finite_diff_check<double>([&]() { return sum(max_pool2d(x, 2, 2)); }, {x});
    CHECK(r.max_rel_error < 1e-6);
  }
  SUBCASE("global avg pool") {
    auto r = finite_diff_check<double>([&]() { return sum(global_avg_pool(x)); }, {x});
    CHECK(r.max_rel_error < 1e-6);
  }
  SUBCASE("channel slice and concat") {
    auto r = finite_diff_check<double>(
        [&]() {
          auto parts = channel_split(x, 2);
          return sum(channel_concat(std::vector<Tensor<double>>{parts[1], parts[0]}));
        },
        {x});
    CHECK(r.max_rel_error < 1e-6);
  }
  SUBCASE("linear + softmax cross entropy") {
    auto h = rand_tensor<double>(rng, {3, 5});
    auto w = rand_tensor<double>(rng, {4, 5});
    auto b = rand_tensor<double>(rng, {4});
    std::vector<int> labels = {1, 0, 3};
    auto r = finite_diff_check<double>(
        [&]() { return softmax_cross_entropy(linear(h, w, b), labels); }, {h, w, b});
    CHECK(r.max_rel_error < 1e-6);
  }
  SUBCASE("scale, add, mul, sum") {
    auto a = rand_tensor<double>(rng, {6});
    auto b = rand_tensor<double>(rng, {6});
    auto r = finite_diff_check<double>(
        [&]() { return sum(add(scale(a, 0.5), mul(a, b))); }, {a, b});
    CHECK(r.max_rel_error < 1e-6);
  }
}
