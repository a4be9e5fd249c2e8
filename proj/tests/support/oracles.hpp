#pragma once
// Independent reference implementations used only by tests: finite
// differences, naive loop nests and random fixtures.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "lensformer/ops.hpp"
#include "lensformer/tensor.hpp"

namespace lensformer::testing {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

/// Values whose magnitudes stay at least `gap` away from zero.
template <typename T>
Tensor<T> random_away_from_zero(Shape shape, std::mt19937_64& rng, double gap = 0.05, double hi = 2.0) {
  std::uniform_real_distribution<double> u(gap, hi);
  std::bernoulli_distribution sign(0.5);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(sign(rng) ? u(rng) : -u(rng));
  return t;
}

/// Distinct values spaced at least 1/numel apart (no max-pool ties).
template <typename T>
Tensor<T> random_distinct(Shape shape, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::vector<std::size_t> order(t.numel());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < order.size(); ++i) t[i] = static_cast<T>(2.0 * order[i] / order.size() - 1.0);
  return t;
}

/// Fourth-order central difference of a scalar function of one tensor entry.
inline double finite_difference(Tensor<double>& x, std::size_t i, const std::function<double()>& f, double h = 1e-4) {
  const double x0 = x[i];
  x[i] = x0 + 2 * h;
  const double fp2 = f();
  x[i] = x0 + h;
  const double fp1 = f();
  x[i] = x0 - h;
  const double fm1 = f();
  x[i] = x0 - 2 * h;
  const double fm2 = f();
  x[i] = x0;
  return (-fp2 + 8 * fp1 - 8 * fm1 + fm2) / (12 * h);
}

struct GradCheck {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // stencils that crossed a piecewise branch
};

/// Compares analytic gradients of `loss` against finite differences for the
/// listed tensors. `loss` must rebuild the graph from scratch on every call.
/// Entries where both magnitudes are below `floor` are skipped. A stencil
/// that changes a piecewise branch is retried with h/10 and h/100; if it
/// still crosses, the entry is skipped and sampling moves on.
inline GradCheck check_gradients(std::vector<Tensor<double>> params, const std::function<Tensor<double>()>& loss,
                                 std::size_t max_per_tensor = 0, std::uint64_t seed = 0, double h = 1e-4,
                                 double floor = 1e-8) {
  for (auto& p : params) {
    p.set_requires_grad();
    p.zero_grad();
  }
  Tape<double>::current().clear();
  backward(loss());
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    analytic.emplace_back(p.numel(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.back().begin());
  }
  BranchTrace trace;
  auto value = [&] {
    NoGradGuard<double> guard;
    trace = BranchTrace{};
    BranchTraceScope scope(trace);
    return loss().item();
  };
  value();
  const std::uint64_t base = trace.hash;
  bool crossed = false;
  auto probe = [&] {
    const double v = value();
    crossed |= trace.hash != base;
    return v;
  };
  GradCheck out;
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    std::vector<std::size_t> idx(p.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_per_tensor) std::shuffle(idx.begin(), idx.end(), rng);
    std::size_t taken = 0;
    for (auto i : idx) {
      if (max_per_tensor && taken == max_per_tensor) break;
      double num = 0.0;
      double step = h;
      for (int attempt = 0; attempt < 3; ++attempt, step /= 10) {
        crossed = false;
        num = finite_difference(p, i, probe, step);
        if (!crossed) break;
      }
      if (crossed) {
        ++out.skipped;
        continue;
      }
      ++taken;
      const double ana = analytic[k][i];
      const double mag = std::max(std::abs(num), std::abs(ana));
      if (mag <= floor) continue;
      out.max_rel_err = std::max(out.max_rel_err, std::abs(num - ana) / mag);
      ++out.checked;
    }
  }
  for (auto& p : params) p.zero_grad();
  return out;
}

/// Six-nested-loop cross-correlation, [Ci,H,W] x [Co,Ci,kh,kw].
template <typename T>
Tensor<T> naive_conv2d(const Tensor<T>& x, const Tensor<T>& k, std::size_t stride, std::size_t pad) {
  const std::size_t ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1, wo = (w + 2 * pad - kw) / stride + 1;
  Tensor<T> out({co, ho, wo});
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        T acc = T(0);
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              const T v = (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w))
                              ? T(0)
                              : x[(c * h + iy) * w + ix];
              acc += v * k[((o * ci + c) * kh + ky) * kw + kx];
            }
        out[(o * ho + oy) * wo + ox] = acc;
      }
  return out;
}

template <typename T>
Tensor<T> naive_dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const std::size_t k = w.dim(0), n = w.dim(1), rows = x.numel() / k;
  Shape s(x.shape().begin(), x.shape().end() - 1);
  s.push_back(n);
  Tensor<T> out(s);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += x[r * k + p] * w[p * n + j];
      out[r * n + j] = acc + b[j];
    }
  return out;
}

/// Plain [m,k] x [k,n] product.
inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                        std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  return c;
}

}  // namespace lensformer::testing
