#pragma once

// Independent reference implementations used as test oracles. These are
// deliberately written in the most literal way possible (no im2col, no GEMM,
// no sharing with the library code) so they can arbitrate correctness.

#include <cmath>
#include <random>
#include <vector>

namespace oracle {

// Literal 7-loop convolution. x is (N,C,H,W) dense; w is (O, C/groups, kh, kw).
template <typename T>
std::vector<T> conv2d(const std::vector<T>& x, int N, int C, int H, int W,
                      const std::vector<T>& w, int O, int kh, int kw, int stride,
                      int pad, int groups, int* OHout, int* OWout) {
  const int ipg = C / groups;
  const int opg = O / groups;
  const int OH = (H + 2 * pad - kh) / stride + 1;
  const int OW = (W + 2 * pad - kw) / stride + 1;
  *OHout = OH;
  *OWout = OW;
  std::vector<T> y(static_cast<size_t>(N) * O * OH * OW, T(0));
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o) {
      const int g = o / opg;
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          T acc = T(0);
          for (int ci = 0; ci < ipg; ++ci)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = oy * stride - pad + ky;
                const int ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                const T xv = x[((static_cast<size_t>(n) * C + g * ipg + ci) * H + iy) * W + ix];
                const T wv = w[((static_cast<size_t>(o) * ipg + ci) * kh + ky) * kw + kx];
                acc += xv * wv;
              }
          y[((static_cast<size_t>(n) * O + o) * OH + oy) * OW + ox] = acc;
        }
    }
  return y;
}

// Mean cross-entropy from explicit softmax.
template <typename T>
double cross_entropy(const std::vector<T>& logits, int N, int C,
                     const std::vector<int>& labels) {
  double total = 0;
  for (int n = 0; n < N; ++n) {
    double denom = 0;
    for (int c = 0; c < C; ++c) denom += std::exp(static_cast<double>(logits[n * C + c]));
    const double p = std::exp(static_cast<double>(logits[n * C + labels[n]])) / denom;
    total += -std::log(p);
  }
  return total / N;
}

inline std::vector<double> random_vec(std::mt19937_64& rng, size_t n, double lo = -1.0,
                                      double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

template <typename T>
std::vector<T> cast_vec(const std::vector<double>& v) {
  std::vector<T> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = static_cast<T>(v[i]);
  return out;
}

}  // namespace oracle
