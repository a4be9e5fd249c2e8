#pragma once
/*
 * Differentiable tensor operations. Each op computes its forward value
 * eagerly and, when an input requires a gradient, records a closure on the
 * thread's Tape that accumulates into the inputs' gradients.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "lensformer/kernels.hpp"
#include "lensformer/tensor.hpp"

namespace lensformer {

namespace detail {

template <typename T>
bool wants_grad(const typename Tensor<T>::StoragePtr& s) {
  return s->requires_grad;
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline std::size_t prod(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t n = 1;
  for (std::size_t i = from; i < to; ++i) n *= s[i];
  return n;
}

inline std::size_t normalize_axis(long axis, std::size_t rank) {
  long r = static_cast<long>(rank);
  if (axis < -r || axis >= r) throw DimensionError("axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

/// a + b where b's shape equals a's shape or a trailing suffix of it.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!detail::is_suffix(b.shape(), a.shape())) {
    throw DimensionError("add: cannot broadcast " + to_string(b.shape()) + " onto " + to_string(a.shape()));
  }
  Tensor<T> out(a.shape());
  const std::size_t nb = b.numel();
  const T* pa = a.raw();
  const T* pb = b.raw();
  T* po = out.raw();
  for (std::size_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + pb[i % nb];
  auto sa = a.storage(), sb = b.storage(), so = out.storage();
  Tape<T>::current().record({&a, &b}, out, [sa, sb, so, nb] {
    const auto& g = so->grad;
    if (sa->requires_grad) {
      sa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) sa->grad[i] += g[i];
    }
    if (sb->requires_grad) {
      sb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) sb->grad[i % nb] += g[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  auto sa = a.storage(), sb = b.storage(), so = out.storage();
  Tape<T>::current().record({&a, &b}, out, [sa, sb, so] {
    const auto& g = so->grad;
    if (sa->requires_grad) {
      sa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) sa->grad[i] += g[i] * sb->data[i];
    }
    if (sb->requires_grad) {
      sb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) sb->grad[i] += g[i] * sa->data[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * factor;
  auto sa = a.storage(), so = out.storage();
  Tape<T>::current().record({&a}, out, [sa, so, factor] {
    sa->ensure_grad();
    for (std::size_t i = 0; i < so->grad.size(); ++i) sa->grad[i] += so->grad[i] * factor;
  });
  return out;
}

/// Fingerprint of the branches taken by piecewise ops (ELU side, pool
/// argmax). Install one with BranchTraceScope to tell whether two forward
/// passes stayed on the same smooth piece.
struct BranchTrace {
  std::uint64_t hash = 0xcbf29ce484222325ULL;

  void add(std::uint64_t v) {
    hash ^= v + 0x9E3779B97F4A7C15ULL + (hash << 6) + (hash >> 2);
  }

  static BranchTrace*& active() {
    thread_local BranchTrace* current = nullptr;
    return current;
  }
};

class BranchTraceScope {
 public:
  explicit BranchTraceScope(BranchTrace& t) : prev_(BranchTrace::active()) { BranchTrace::active() = &t; }
  ~BranchTraceScope() { BranchTrace::active() = prev_; }
  BranchTraceScope(const BranchTraceScope&) = delete;
  BranchTraceScope& operator=(const BranchTraceScope&) = delete;

 private:
  BranchTrace* prev_;
};

/// Exponential linear unit: x for x > 0, alpha * (e^x - 1) otherwise.
template <typename T>
Tensor<T> elu(const Tensor<T>& x, T alpha = T(1)) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? x[i] : alpha * std::expm1(x[i]);
  if (auto* trace = BranchTrace::active())
    for (std::size_t i = 0; i < x.numel(); ++i) trace->add(x[i] > T(0) ? 2 * i + 1 : 2 * i);
  auto sx = x.storage(), so = out.storage();
  Tape<T>::current().record({&x}, out, [sx, so, alpha] {
    sx->ensure_grad();
    for (std::size_t i = 0; i < so->grad.size(); ++i) {
      const T d = sx->data[i] > T(0) ? T(1) : so->data[i] + alpha;
      sx->grad[i] += so->grad[i] * d;
    }
  });
  return out;
}

/// Logistic function, clamped to the open interval (0, 1) so finite logits
/// never produce an exact 0 or 1 at the storage precision.
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  const T lo = std::numeric_limits<T>::min();
  const T hi = std::nextafter(T(1), T(0));
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const T v = x[i];
    T y;
    if (v >= T(0)) {
      y = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      y = e / (T(1) + e);
    }
    out[i] = std::clamp(y, lo, hi);
  }
  auto sx = x.storage(), so = out.storage();
  Tape<T>::current().record({&x}, out, [sx, so] {
    sx->ensure_grad();
    for (std::size_t i = 0; i < so->grad.size(); ++i) {
      const T y = so->data[i];
      sx->grad[i] += so->grad[i] * y * (T(1) - y);
    }
  });
  return out;
}

// ------------------------------------------------------------------- shaping

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  auto sx = x.storage(), so = out.storage();
  Tape<T>::current().record({&x}, out, [sx, so] {
    sx->ensure_grad();
    for (std::size_t i = 0; i < so->grad.size(); ++i) sx->grad[i] += so->grad[i];
  });
  return out;
}

/// Swaps the last two axes.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("transpose needs rank >= 2, got " + to_string(x.shape()));
  Shape s = x.shape();
  const std::size_t r = s[s.size() - 2], c = s[s.size() - 1];
  std::swap(s[s.size() - 2], s[s.size() - 1]);
  Tensor<T> out(s);
  const std::size_t batch = x.numel() / (r * c);
  for (std::size_t b = 0; b < batch; ++b) kernels::transpose(r, c, x.raw() + b * r * c, out.raw() + b * r * c);
  auto sx = x.storage(), so = out.storage();
  Tape<T>::current().record({&x}, out, [sx, so, batch, r, c] {
    sx->ensure_grad();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) sx->grad[b * r * c + i * c + j] += so->grad[b * r * c + j * r + i];
  });
  return out;
}

/// Concatenates along the last axis; all leading extents must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (auto& p : parts) {
    Shape pl(p.shape().begin(), p.shape().end() - 1);
    if (pl != lead) throw DimensionError("concat: leading extents differ, " + to_string(p.shape()) + " vs " + to_string(parts[0].shape()));
    widths.push_back(p.shape().back());
    total += p.shape().back();
  }
  Shape os = lead;
  os.push_back(total);
  Tensor<T> out(os);
  const std::size_t rows = shape_numel(lead);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(parts[k].raw() + r * widths[k], widths[k], out.raw() + r * total + off);
    off += widths[k];
  }
  std::vector<typename Tensor<T>::StoragePtr> ins;
  for (auto& p : parts) ins.push_back(p.storage());
  auto so = out.storage();
  Tape<T>::current().record(parts, out, [ins, so, widths, rows, total] {
    std::size_t off2 = 0;
    for (std::size_t k = 0; k < ins.size(); ++k) {
      if (ins[k]->requires_grad) {
        ins[k]->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[k]; ++j) ins[k]->grad[r * widths[k] + j] += so->grad[r * total + off2 + j];
      }
      off2 += widths[k];
    }
  });
  return out;
}

// ---------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (auto v : x.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  auto sx = x.storage(), so = out.storage();
  Tape<T>::current().record({&x}, out, [sx, so] {
    sx->ensure_grad();
    for (auto& g : sx->grad) g += so->grad[0];
  });
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------- linear alg

/// Batched matrix product [..,m,k] x [..,k,n] -> [..,m,n]; batch extents
/// broadcast with the usual size-1 rule, and a rank-2 right operand is shared
/// across every batch entry.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  auto mismatch = [&] {
    return DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  };
  if (a.rank() < 2 || b.rank() < 2) throw mismatch();
  const std::size_t m = a.shape()[a.rank() - 2], k = a.shape().back();
  const std::size_t kb = b.shape()[b.rank() - 2], n = b.shape().back();
  if (k != kb) throw mismatch();

  auto so_ptr = typename Tensor<T>::StoragePtr{};
  if (b.rank() == 2) {
    Shape os(a.shape().begin(), a.shape().end() - 1);
    os.push_back(n);
    Tensor<T> out(os);
    const std::size_t rows = a.numel() / k;
    kernels::gemm_nn(rows, n, k, a.raw(), b.raw(), out.raw(), false);
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    Tape<T>::current().record({&a, &b}, out, [sa, sb, so, rows, n, k] {
      if (sa->requires_grad) {
        sa->ensure_grad();
        kernels::gemm_nt(rows, k, n, so->grad.data(), sb->data.data(), sa->grad.data(), true);
      }
      if (sb->requires_grad) {
        sb->ensure_grad();
        kernels::gemm_tn(k, n, rows, sa->data.data(), so->grad.data(), sb->grad.data(), true);
      }
    });
    return out;
  }

  Shape ab(a.shape().begin(), a.shape().end() - 2), bb(b.shape().begin(), b.shape().end() - 2);
  const std::size_t nd = std::max(ab.size(), bb.size());
  ab.insert(ab.begin(), nd - ab.size(), 1);
  bb.insert(bb.begin(), nd - bb.size(), 1);
  Shape batch(nd);
  for (std::size_t i = 0; i < nd; ++i) {
    if (ab[i] != bb[i] && ab[i] != 1 && bb[i] != 1) throw mismatch();
    batch[i] = std::max(ab[i], bb[i]);
  }
  const std::size_t nbatch = shape_numel(batch);
  std::vector<std::size_t> aoff(nbatch), boff(nbatch);
  for (std::size_t f = 0; f < nbatch; ++f) {
    std::size_t rem = f, ai = 0, bi = 0, astride = 1, bstride = 1;
    for (std::size_t d = nd; d-- > 0;) {
      const std::size_t idx = rem % batch[d];
      rem /= batch[d];
      if (ab[d] != 1) ai += idx * astride;
      if (bb[d] != 1) bi += idx * bstride;
      astride *= ab[d];
      bstride *= bb[d];
    }
    aoff[f] = ai * m * k;
    boff[f] = bi * k * n;
  }
  Shape os = batch;
  os.push_back(m);
  os.push_back(n);
  Tensor<T> out(os);
  for (std::size_t f = 0; f < nbatch; ++f)
    kernels::gemm_nn(m, n, k, a.raw() + aoff[f], b.raw() + boff[f], out.raw() + f * m * n, false);
  auto sa = a.storage(), sb = b.storage(), so = out.storage();
  Tape<T>::current().record({&a, &b}, out, [sa, sb, so, aoff, boff, nbatch, m, n, k] {
    if (sa->requires_grad) sa->ensure_grad();
    if (sb->requires_grad) sb->ensure_grad();
    for (std::size_t f = 0; f < nbatch; ++f) {
      const T* g = so->grad.data() + f * m * n;
      if (sa->requires_grad) kernels::gemm_nt(m, k, n, g, sb->data.data() + boff[f], sa->grad.data() + aoff[f], true);
      if (sb->requires_grad) kernels::gemm_tn(k, n, m, sa->data.data() + aoff[f], g, sb->grad.data() + boff[f], true);
    }
  });
  return out;
}

/// Affine map x W + b over the last axis of x.
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (w.rank() != 2 || b.rank() != 1 || x.shape().back() != w.dim(0) || b.dim(0) != w.dim(1)) {
    throw DimensionError("dense: incompatible shapes x" + to_string(x.shape()) + " W" + to_string(w.shape()) +
                         " b" + to_string(b.shape()));
  }
  const std::size_t k = w.dim(0), n = w.dim(1), rows = x.numel() / k;
  Shape os(x.shape().begin(), x.shape().end() - 1);
  os.push_back(n);
  Tensor<T> out(os);
  kernels::gemm_nn(rows, n, k, x.raw(), w.raw(), out.raw(), false);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += b[j];
  auto sx = x.storage(), sw = w.storage(), sbias = b.storage(), so = out.storage();
  Tape<T>::current().record({&x, &w, &b}, out, [sx, sw, sbias, so, rows, n, k] {
    const T* g = so->grad.data();
    if (sx->requires_grad) {
      sx->ensure_grad();
      kernels::gemm_nt(rows, k, n, g, sw->data.data(), sx->grad.data(), true);
    }
    if (sw->requires_grad) {
      sw->ensure_grad();
      kernels::gemm_tn(k, n, rows, sx->data.data(), g, sw->grad.data(), true);
    }
    if (sbias->requires_grad) {
      sbias->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) sbias->grad[j] += g[r * n + j];
    }
  });
  return out;
}

// ------------------------------------------------------------- normalisation

/// Numerically stable softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, long axis = -1) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank());
  const std::size_t outer = detail::prod(x.shape(), 0, ax), len = x.shape()[ax],
                    inner = detail::prod(x.shape(), ax + 1, x.rank());
  Tensor<T> out(x.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, x[base + j * inner]);
      T z = T(0);
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(x[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= z;
    }
  }
  auto sx = x.storage(), so = out.storage();
  Tape<T>::current().record({&x}, out, [sx, so, outer, len, inner] {
    sx->ensure_grad();
    const auto& y = so->data;
    const auto& g = so->grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        T dot = T(0);
        for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t i = base + j * inner;
          sx->grad[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
  return out;
}

/// Normalises each row over the last axis, then applies gamma * xhat + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  const std::size_t d = x.shape().back();
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != d || beta.dim(0) != d) {
    throw DimensionError("layer_norm: affine shapes " + to_string(gamma.shape()) + "/" + to_string(beta.shape()) +
                         " do not match " + to_string(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.numel()), inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x.raw() + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    inv[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * inv[r];
      xhat[r * d + j] = h;
      out[r * d + j] = gamma[j] * h + beta[j];
    }
  }
  auto sx = x.storage(), sg = gamma.storage(), sb = beta.storage(), so = out.storage();
  Tape<T>::current().record({&x, &gamma, &beta}, out,
                            [sx, sg, sb, so, xhat = std::move(xhat), inv = std::move(inv), rows, d] {
    const auto& g = so->grad;
    if (sg->requires_grad) {
      sg->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) sg->grad[j] += g[r * d + j] * xhat[r * d + j];
    }
    if (sb->requires_grad) {
      sb->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) sb->grad[j] += g[r * d + j];
    }
    if (sx->requires_grad) {
      sx->ensure_grad();
      const T n = static_cast<T>(d);
      for (std::size_t r = 0; r < rows; ++r) {
        T s1 = T(0), s2 = T(0);
        for (std::size_t j = 0; j < d; ++j) {
          const T dh = g[r * d + j] * sg->data[j];
          s1 += dh;
          s2 += dh * xhat[r * d + j];
        }
        for (std::size_t j = 0; j < d; ++j) {
          const T dh = g[r * d + j] * sg->data[j];
          sx->grad[r * d + j] += inv[r] / n * (n * dh - s1 - xhat[r * d + j] * s2);
        }
      }
    }
  });
  return out;
}

// ------------------------------------------------------------- convolution

/// 2-D cross-correlation (no kernel flip) of [C_in,H,W] or [B,C_in,H,W] with
/// kernels [C_out,C_in,kh,kw]; zero padding on all sides.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride = 1, std::size_t padding = 0) {
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if ((input.rank() != 3 && input.rank() != 4) || kernels.rank() != 4) {
    throw DimensionError("conv2d: expected [C,H,W] or [B,C,H,W] input and [Co,Ci,kh,kw] kernels, got " +
                         to_string(input.shape()) + " and " + to_string(kernels.shape()));
  }
  const bool batched = input.rank() == 4;
  const std::size_t nb = batched ? input.dim(0) : 1;
  const std::size_t off = batched ? 1 : 0;
  const std::size_t ci = input.dim(off), h = input.dim(off + 1), w = input.dim(off + 2);
  const std::size_t co = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kernels.dim(1) != ci) {
    throw DimensionError("conv2d: input channels " + to_string(input.shape()) + " do not match kernels " +
                         to_string(kernels.shape()));
  }
  if (kh > h + 2 * padding || kw > w + 2 * padding) {
    throw DimensionError("conv2d: kernel " + to_string(kernels.shape()) + " larger than padded input " +
                         to_string(input.shape()));
  }
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1, wo = (w + 2 * padding - kw) / stride + 1;
  const std::size_t kk = ci * kh * kw, hw = ho * wo;

  Shape os = batched ? Shape{nb, co, ho, wo} : Shape{co, ho, wo};
  Tensor<T> out(os);

  // im2col rows are ordered (channel, ky, kx), matching the naive loop nest.
  auto im2col = [=](const T* img, T* col) {
    for (std::size_t c = 0; c < ci; ++c)
      for (std::size_t ky = 0; ky < kh; ++ky)
        for (std::size_t kx = 0; kx < kw; ++kx) {
          T* dst = col + ((c * kh + ky) * kw + kx) * hw;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
              dst[oy * wo + ox] = (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w))
                                      ? T(0)
                                      : img[(c * h + iy) * w + ix];
            }
          }
        }
  };

  const bool record = Tape<T>::current().enabled() && (input.requires_grad() || kernels.requires_grad());
  std::vector<T> cols(record ? nb * kk * hw : kk * hw);
  for (std::size_t b = 0; b < nb; ++b) {
    T* col = cols.data() + (record ? b * kk * hw : 0);
    im2col(input.raw() + b * ci * h * w, col);
    kernels::gemm_nn(co, hw, kk, kernels.raw(), col, out.raw() + b * co * hw, false);
  }
  if (!record) return out;

  auto sx = input.storage(), sk = kernels.storage(), so = out.storage();
  Tape<T>::current().record({&input, &kernels}, out, [=, cols = std::move(cols)] {
    std::vector<T> dcol;
    if (sk->requires_grad) sk->ensure_grad();
    if (sx->requires_grad) {
      sx->ensure_grad();
      dcol.resize(kk * hw);
    }
    for (std::size_t b = 0; b < nb; ++b) {
      const T* g = so->grad.data() + b * co * hw;
      const T* col = cols.data() + b * kk * hw;
      if (sk->requires_grad) kernels::gemm_nt(co, kk, hw, g, col, sk->grad.data(), true);
      if (sx->requires_grad) {
        kernels::gemm_tn(kk, hw, co, sk->data.data(), g, dcol.data(), false);
        T* dimg = sx->grad.data() + b * ci * h * w;
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const T* src = dcol.data() + ((c * kh + ky) * kw + kx) * hw;
              for (std::size_t oy = 0; oy < ho; ++oy) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
                if (iy < 0 || iy >= static_cast<long>(h)) continue;
                for (std::size_t ox = 0; ox < wo; ++ox) {
                  const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
                  if (ix < 0 || ix >= static_cast<long>(w)) continue;
                  dimg[(c * h + iy) * w + ix] += src[oy * wo + ox];
                }
              }
            }
      }
    }
  });
  return out;
}

/// Adds bias[c] to every pixel of channel c in [..,C,H,W].
template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (x.rank() < 3 || bias.rank() != 1 || x.shape()[x.rank() - 3] != bias.dim(0)) {
    throw DimensionError("add_channel_bias: " + to_string(bias.shape()) + " vs " + to_string(x.shape()));
  }
  const std::size_t c = bias.dim(0), plane = x.shape()[x.rank() - 2] * x.shape().back();
  const std::size_t nb = x.numel() / (c * plane);
  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t i = (b * c + ch) * plane + p;
        out[i] = x[i] + bias[ch];
      }
  auto sx = x.storage(), sbias = bias.storage(), so = out.storage();
  Tape<T>::current().record({&x, &bias}, out, [sx, sbias, so, c, plane, nb] {
    if (sx->requires_grad) {
      sx->ensure_grad();
      for (std::size_t i = 0; i < so->grad.size(); ++i) sx->grad[i] += so->grad[i];
    }
    if (sbias->requires_grad) {
      sbias->ensure_grad();
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
          T acc = T(0);
          for (std::size_t p = 0; p < plane; ++p) acc += so->grad[(b * c + ch) * plane + p];
          sbias->grad[ch] += acc;
        }
    }
  });
  return out;
}

/// Non-overlapping max pooling over the last two axes (floor semantics).
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t window = 2) {
  if (x.rank() < 2 || window < 1) throw DimensionError("max_pool2d: bad input " + to_string(x.shape()));
  const std::size_t h = x.shape()[x.rank() - 2], w = x.shape().back();
  const std::size_t ho = h / window, wo = w / window;
  if (ho == 0 || wo == 0) throw DimensionError("max_pool2d: window larger than input " + to_string(x.shape()));
  const std::size_t planes = x.numel() / (h * w);
  Shape os = x.shape();
  os[os.size() - 2] = ho;
  os.back() = wo;
  Tensor<T> out(os);
  std::vector<std::size_t> arg(out.numel());
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = p * h * w + (oy * window) * w + ox * window;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t i = p * h * w + (oy * window + dy) * w + ox * window + dx;
            if (x[i] > x[best]) best = i;
          }
        const std::size_t o = (p * ho + oy) * wo + ox;
        out[o] = x[best];
        arg[o] = best;
      }
  if (auto* trace = BranchTrace::active())
    for (auto a : arg) trace->add(a);
  auto sx = x.storage(), so = out.storage();
  Tape<T>::current().record({&x}, out, [sx, so, arg = std::move(arg)] {
    sx->ensure_grad();
    for (std::size_t o = 0; o < arg.size(); ++o) sx->grad[arg[o]] += so->grad[o];
  });
  return out;
}

// ---------------------------------------------------------------------- loss

inline constexpr double kBceEpsilon = 1e-7;

/// Mean binary cross-entropy with probabilities clamped to [eps, 1 - eps].
template <typename T>
Tensor<T> binary_cross_entropy(const Tensor<T>& p, const Tensor<T>& y, T eps = T(kBceEpsilon)) {
  if (p.numel() != y.numel()) {
    throw DimensionError("binary_cross_entropy: " + to_string(p.shape()) + " vs " + to_string(y.shape()));
  }
  const T lo = eps, hi = T(1) - eps;
  const std::size_t n = p.numel();
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T pc = std::clamp(p[i], lo, hi);
    acc -= y[i] * std::log(pc) + (T(1) - y[i]) * std::log(T(1) - pc);
  }
  Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(n));
  auto sp = p.storage(), sy = y.storage(), so = out.storage();
  Tape<T>::current().record({&p}, out, [sp, sy, so, lo, hi, n] {
    sp->ensure_grad();
    const T g = so->grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T pi = sp->data[i];
      if (pi < lo || pi > hi) continue;
      const T yi = sy->data[i];
      sp->grad[i] += g * (-yi / pi + (T(1) - yi) / (T(1) - pi));
    }
  });
  return out;
}

}  // namespace lensformer
