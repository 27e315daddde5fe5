// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include "mvdiff/diffcore/ops.h"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace mvdiff::diff {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

std::size_t product(const Shape& s, std::size_t begin, std::size_t end) {
  std::size_t n = 1;
  for (std::size_t i = begin; i < end; ++i) n *= s[i];
  return n;
}

// `b` must equal a trailing suffix of `a`.
void check_suffix(const Shape& a, const Shape& b, const char* op) {
  bool ok = b.size() <= a.size();
  for (std::size_t i = 0; ok && i < b.size(); ++i) ok = a[a.size() - b.size() + i] == b[i];
  if (!ok) {
    throw ShapeError(std::string(op) + ": shape " + shape_str(b) + " does not broadcast to " + shape_str(a));
  }
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.raw();
  const T* s = src.raw();
  for (std::size_t i = 0, n = dst.numel(); i < n; ++i) d[i] += s[i];
}

// Sums `src` over its leading dims into a tensor of `dst`'s (suffix) shape.
template <typename T>
void accumulate_reduced(Tensor<T>& dst, const Tensor<T>& src) {
  const std::size_t nb = dst.numel();
  T* d = dst.raw();
  const T* s = src.raw();
  for (std::size_t i = 0, n = src.numel(); i < n; ++i) d[i % nb] += s[i];
}

template <typename T>
Tensor<T> permute_raw(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  const Shape& in = x.shape();
  const std::size_t r = in.size();
  Shape out_shape(r);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];
  std::vector<std::size_t> stride_for_out(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in[order[i]];
    stride_for_out[i] = in_strides[order[i]];
  }
  Tensor<T> out(out_shape);
  std::vector<std::size_t> idx(r, 0);
  const T* src = x.raw();
  T* dst = out.raw();
  const std::size_t n = out.numel();
  std::size_t src_off = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    dst[flat] = src[src_off];
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      src_off += stride_for_out[ax];
      if (idx[ax] < out_shape[ax]) break;
      src_off -= stride_for_out[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

template <typename T>
void standardize(const T* x, std::size_t rows, std::size_t n, T eps, T* xhat, T* inv_std) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x + r * n;
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(n);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < n; ++j) xhat[r * n + j] = (row[j] - mu) * is;
  }
}

// dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)), per row.
template <typename T>
void standardize_backward(const T* xhat, const T* inv_std, const T* dxhat, std::size_t rows, std::size_t n, T* dx) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xh = xhat + r * n;
    const T* dh = dxhat + r * n;
    T m1 = 0, m2 = 0;
    for (std::size_t j = 0; j < n; ++j) {
      m1 += dh[j];
      m2 += dh[j] * xh[j];
    }
    m1 /= static_cast<T>(n);
    m2 /= static_cast<T>(n);
    for (std::size_t j = 0; j < n; ++j) dx[r * n + j] += inv_std[r] * (dh[j] - m1 - xh[j] * m2);
  }
}

struct ConvGeometry {
  std::size_t batch, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
  bool batched;
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t plane = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = cols + ((c * g.kh + ki) * g.kw + kj) * plane;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          T* out = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(out, out + g.wo, T(0));
            continue;
          }
          const T* in = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T(0) : in[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx) {
  const std::size_t plane = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * plane;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* out = dx + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) out[ix] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool transpose_b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) throw ShapeError("matmul needs operands of rank >= 2");
  const std::size_t k = as.back();
  const std::size_t bk = transpose_b ? bs.back() : bs[bs.size() - 2];
  const std::size_t n = transpose_b ? bs[bs.size() - 2] : bs.back();
  if (bk != k) {
    throw ShapeError("matmul shape mismatch: " + shape_str(as) + " x " + shape_str(bs) +
                     (transpose_b ? "^T" : ""));
  }
  const bool shared = bs.size() == 2;
  if (!shared) {
    if (bs.size() != as.size() || !std::equal(as.begin(), as.end() - 2, bs.begin())) {
      throw ShapeError("matmul batch dims differ: " + shape_str(as) + " x " + shape_str(bs));
    }
  }
  const std::size_t batch = shared ? 1 : product(as, 0, as.size() - 2);
  const std::size_t rows = shared ? a.value().numel() / k : as[as.size() - 2];

  Shape out_shape = as;
  out_shape.back() = n;
  Tensor<T> c(out_shape);
  const T* ap = a.value().raw();
  const T* bp = b.value().raw();
  for (std::size_t bt = 0; bt < batch; ++bt) {
    MatMap<T> C(c.raw() + bt * rows * n, rows, n);
    ConstMatMap<T> A(ap + bt * rows * k, rows, k);
    if (transpose_b) {
      ConstMatMap<T> B(bp + bt * n * k, n, k);
      C.noalias() = A * B.transpose();
    } else {
      ConstMatMap<T> B(bp + bt * k * n, k, n);
      C.noalias() = A * B;
    }
  }

  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record("matmul", std::move(c), {a, b},
                         [=](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                           const T* av = t.value(aid).raw();
                           const T* bv = t.value(bid).raw();
                           const bool need_a = t.requires_grad(aid);
                           const bool need_b = t.requires_grad(bid);
                           T* ga = need_a ? t.grad_buffer(aid).raw() : nullptr;
                           T* gb = need_b ? t.grad_buffer(bid).raw() : nullptr;
                           for (std::size_t bt = 0; bt < batch; ++bt) {
                             ConstMatMap<T> G(g.raw() + bt * rows * n, rows, n);
                             ConstMatMap<T> A(av + bt * rows * k, rows, k);
                             const std::size_t boff = shared ? 0 : bt * n * k;
                             if (transpose_b) {
                               ConstMatMap<T> B(bv + boff, n, k);
                               if (need_a) MatMap<T>(ga + bt * rows * k, rows, k).noalias() += G * B;
                               if (need_b) MatMap<T>(gb + boff, n, k).noalias() += G.transpose() * A;
                             } else {
                               ConstMatMap<T> B(bv + boff, k, n);
                               if (need_a) MatMap<T>(ga + bt * rows * k, rows, k).noalias() += G * B.transpose();
                               if (need_b) MatMap<T>(gb + boff, k, n).noalias() += A.transpose() * G;
                             }
                           }
                         });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  check_suffix(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  const std::size_t nb = b.value().numel();
  const T* bp = b.value().raw();
  T* o = out.raw();
  for (std::size_t i = 0, n = out.numel(); i < n; ++i) o[i] += bp[i % nb];
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record("add", std::move(out), {a, b}, [=](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
    if (t.requires_grad(aid)) accumulate(t.grad_buffer(aid), g);
    if (t.requires_grad(bid)) accumulate_reduced(t.grad_buffer(bid), g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  check_suffix(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  const std::size_t nb = b.value().numel();
  const T* bp = b.value().raw();
  T* o = out.raw();
  for (std::size_t i = 0, n = out.numel(); i < n; ++i) o[i] -= bp[i % nb];
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record("sub", std::move(out), {a, b}, [=](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
    if (t.requires_grad(aid)) accumulate(t.grad_buffer(aid), g);
    if (t.requires_grad(bid)) {
      Tensor<T>& gb = t.grad_buffer(bid);
      const std::size_t nb2 = gb.numel();
      for (std::size_t i = 0, n = g.numel(); i < n; ++i) gb[i % nb2] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  check_suffix(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  const std::size_t nb = b.value().numel();
  const T* bp = b.value().raw();
  T* o = out.raw();
  for (std::size_t i = 0, n = out.numel(); i < n; ++i) o[i] *= bp[i % nb];
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record("mul", std::move(out), {a, b}, [=](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
    const Tensor<T>& av = t.value(aid);
    const Tensor<T>& bv = t.value(bid);
    const std::size_t nb2 = bv.numel();
    if (t.requires_grad(aid)) {
      Tensor<T>& ga = t.grad_buffer(aid);
      for (std::size_t i = 0, n = g.numel(); i < n; ++i) ga[i] += g[i] * bv[i % nb2];
    }
    if (t.requires_grad(bid)) {
      Tensor<T>& gb = t.grad_buffer(bid);
      for (std::size_t i = 0, n = g.numel(); i < n; ++i) gb[i % nb2] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  for (T& v : out.storage()) v *= factor;
  const std::size_t aid = a.id();
  return a.tape().record("scale", std::move(out), {a}, [=](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
    Tensor<T>& ga = t.grad_buffer(aid);
    for (std::size_t i = 0, n = g.numel(); i < n; ++i) ga[i] += factor * g[i];
  });
}

template <typename T>
Var<T> square(Var<T> a) {
  Tensor<T> out = a.value();
  for (T& v : out.storage()) v *= v;
  const std::size_t aid = a.id();
  return a.tape().record("square", std::move(out), {a}, [=](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
    const Tensor<T>& av = t.value(aid);
    Tensor<T>& ga = t.grad_buffer(aid);
    for (std::size_t i = 0, n = g.numel(); i < n; ++i) ga[i] += T(2) * av[i] * g[i];
  });
}

template <typename T>
Var<T> gelu(Var<T> a) {
  constexpr T kAlpha = T(0.7978845608028654);  // sqrt(2 / pi)
  constexpr T kBeta = T(0.044715);
  Tensor<T> out = a.value();
  for (T& x : out.storage()) x = T(0.5) * x * (T(1) + std::tanh(kAlpha * (x + kBeta * x * x * x)));
  const std::size_t aid = a.id();
  return a.tape().record("gelu", std::move(out), {a}, [=](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
    const Tensor<T>& av = t.value(aid);
    Tensor<T>& ga = t.grad_buffer(aid);
    for (std::size_t i = 0, n = g.numel(); i < n; ++i) {
      const T x = av[i];
      const T th = std::tanh(kAlpha * (x + kBeta * x * x * x));
      const T dth = (T(1) - th * th) * kAlpha * (T(1) + T(3) * kBeta * x * x);
      ga[i] += g[i] * (T(0.5) * (T(1) + th) + T(0.5) * x * dth);
    }
  });
}

template <typename T>
Var<T> silu(Var<T> a) {
  Tensor<T> out = a.value();
  for (T& x : out.storage()) x = x / (T(1) + std::exp(-x));
  const std::size_t aid = a.id();
  return a.tape().record("silu", std::move(out), {a}, [=](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
    const Tensor<T>& av = t.value(aid);
    Tensor<T>& ga = t.grad_buffer(aid);
    for (std::size_t i = 0, n = g.numel(); i < n; ++i) {
      const T s = T(1) / (T(1) + std::exp(-av[i]));
      ga[i] += g[i] * s * (T(1) + av[i] * (T(1) - s));
    }
  });
}

template <typename T>
Var<T> softmax_rows(Var<T> logits, Var<T> bias) {
  const Shape& s = logits.shape();
  if (s.empty()) throw ShapeError("softmax_rows needs rank >= 1");
  const std::size_t n = s.back();
  const std::size_t rows = logits.value().numel() / n;
  const T* bp = nullptr;
  std::size_t nb = 0;
  if (bias.valid()) {
    check_suffix(s, bias.shape(), "softmax_rows bias");
    bp = bias.value().raw();
    nb = bias.value().numel();
  }
  Tensor<T> out = logits.value();
  T* o = out.raw();
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = o + r * n;
    if (bp) {
      for (std::size_t j = 0; j < n; ++j) row[j] += bp[(r * n + j) % nb];
    }
    const T mx = *std::max_element(row, row + n);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      total += row[j];
    }
    const T inv = T(1) / total;
    for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
  }
  const std::size_t lid = logits.id();
  const std::size_t bid = bias.valid() ? bias.id() : 0;
  const bool has_bias = bias.valid();
  std::vector<Var<T>> inputs{logits};
  if (has_bias) inputs.push_back(bias);
  return logits.tape().record(
      "softmax_rows", std::move(out), inputs, [=](Tape<T>& t, const Tensor<T>& y, const Tensor<T>& g) {
        const bool need_l = t.requires_grad(lid);
        const bool need_b = has_bias && t.requires_grad(bid);
        T* gl = need_l ? t.grad_buffer(lid).raw() : nullptr;
        T* gb = need_b ? t.grad_buffer(bid).raw() : nullptr;
        const std::size_t nb2 = need_b ? t.value(bid).numel() : 1;
        for (std::size_t r = 0; r < rows; ++r) {
          const T* yr = y.raw() + r * n;
          const T* gr = g.raw() + r * n;
          T dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
          for (std::size_t j = 0; j < n; ++j) {
            const T dz = yr[j] * (gr[j] - dot);
            if (gl) gl[r * n + j] += dz;
            if (gb) gb[(r * n + j) % nb2] += dz;
          }
        }
      });
}

template <typename T>
Var<T> standardize_rows(Var<T> x, T eps) {
  if (!(eps > T(0))) throw std::invalid_argument("standardize_rows: eps must be positive");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.value().numel() / n;
  Tensor<T> out(x.shape());
  std::vector<T> inv_std(rows);
  standardize(x.value().raw(), rows, n, eps, out.raw(), inv_std.data());
  const std::size_t xid = x.id();
  return x.tape().record("standardize_rows", std::move(out), {x},
                         [=](Tape<T>& t, const Tensor<T>& xhat, const Tensor<T>& g) {
                           standardize_backward(xhat.raw(), inv_std.data(), g.raw(), rows, n,
                                                t.grad_buffer(xid).raw());
                         });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> offset, T eps) {
  if (!(eps > T(0))) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t n = x.shape().back();
  if (gain.shape() != Shape{n} || offset.shape() != Shape{n}) {
    throw ShapeError("layer_norm: gain/offset must have shape [" + std::to_string(n) + "]");
  }
  const std::size_t rows = x.value().numel() / n;
  std::vector<T> xhat(x.value().numel());
  std::vector<T> inv_std(rows);
  standardize(x.value().raw(), rows, n, eps, xhat.data(), inv_std.data());
  Tensor<T> out(x.shape());
  const T* gp = gain.value().raw();
  const T* op = offset.value().raw();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = gp[j] * xhat[r * n + j] + op[j];
  }
  const std::size_t xid = x.id(), gid = gain.id(), oid = offset.id();
  return x.tape().record(
      "layer_norm", std::move(out), {x, gain, offset},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
        const T* gp2 = t.value(gid).raw();
        if (t.requires_grad(gid)) {
          T* gg = t.grad_buffer(gid).raw();
          for (std::size_t i = 0; i < rows * n; ++i) gg[i % n] += g[i] * xhat[i];
        }
        if (t.requires_grad(oid)) {
          T* go = t.grad_buffer(oid).raw();
          for (std::size_t i = 0; i < rows * n; ++i) go[i % n] += g[i];
        }
        if (t.requires_grad(xid)) {
          std::vector<T> dxhat(rows * n);
          for (std::size_t i = 0; i < rows * n; ++i) dxhat[i] = g[i] * gp2[i % n];
          standardize_backward(xhat.data(), inv_std.data(), dxhat.data(), rows, n, t.grad_buffer(xid).raw());
        }
      });
}

template <typename T>
Var<T> channel_affine(Var<T> x, Var<T> gain, Var<T> offset) {
  const Shape& s = x.shape();
  if (s.size() < 3) throw ShapeError("channel_affine needs [..., C, H, W], got " + shape_str(s));
  const std::size_t c = s[s.size() - 3];
  const std::size_t plane = s[s.size() - 2] * s[s.size() - 1];
  const std::size_t outer = x.value().numel() / (c * plane);
  if ((gain.valid() && gain.shape() != Shape{c}) || (offset.valid() && offset.shape() != Shape{c})) {
    throw ShapeError("channel_affine: per-channel operands must have shape [" + std::to_string(c) + "]");
  }
  Tensor<T> out = x.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T gv = gain.valid() ? gain.value()[ch] : T(1);
      const T ov = offset.valid() ? offset.value()[ch] : T(0);
      T* p = out.raw() + (o * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] = gv * p[i] + ov;
    }
  }
  const std::size_t xid = x.id();
  const bool has_gain = gain.valid(), has_offset = offset.valid();
  const std::size_t gid = has_gain ? gain.id() : 0, oid = has_offset ? offset.id() : 0;
  std::vector<Var<T>> inputs{x};
  if (has_gain) inputs.push_back(gain);
  if (has_offset) inputs.push_back(offset);
  return x.tape().record("channel_affine", std::move(out), inputs,
                         [=](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                           const Tensor<T>& xv = t.value(xid);
                           const bool need_x = t.requires_grad(xid);
                           const bool need_g = has_gain && t.requires_grad(gid);
                           const bool need_o = has_offset && t.requires_grad(oid);
                           T* gx = need_x ? t.grad_buffer(xid).raw() : nullptr;
                           T* gg = need_g ? t.grad_buffer(gid).raw() : nullptr;
                           T* go = need_o ? t.grad_buffer(oid).raw() : nullptr;
                           for (std::size_t o = 0; o < outer; ++o) {
                             for (std::size_t ch = 0; ch < c; ++ch) {
                               const T gv = has_gain ? t.value(gid)[ch] : T(1);
                               const std::size_t base = (o * c + ch) * plane;
                               T sg = 0, sgx = 0;
                               for (std::size_t i = 0; i < plane; ++i) {
                                 sg += g[base + i];
                                 sgx += g[base + i] * xv[base + i];
                                 if (gx) gx[base + i] += gv * g[base + i];
                               }
                               if (gg) gg[ch] += sgx;
                               if (go) go[ch] += sg;
                             }
                           }
                         });
}

template <typename T>
Var<T> group_norm(Var<T> x, std::size_t groups, Var<T> gain, Var<T> offset, T eps) {
  const Shape s = x.shape();
  if (s.size() != 4) throw ShapeError("group_norm needs [B, C, H, W], got " + shape_str(s));
  if (groups == 0 || s[1] % groups != 0) throw ShapeError("group_norm: channels not divisible by groups");
  Var<T> grouped = reshape(x, Shape{s[0], groups, s[1] / groups * s[2] * s[3]});
  Var<T> normed = standardize_rows(grouped, eps);
  return channel_affine(reshape(normed, s), gain, offset);
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> kernel, std::size_t stride, std::size_t pad) {
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (xs.size() != 3 && xs.size() != 4) throw ShapeError("conv2d input must be [C,H,W] or [B,C,H,W]");
  if (ks.size() != 4) throw ShapeError("conv2d kernel must be [C_out, C_in, kh, kw]");
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be >= 1");
  ConvGeometry geo{};
  geo.batched = xs.size() == 4;
  geo.batch = geo.batched ? xs[0] : 1;
  geo.cin = xs[xs.size() - 3];
  geo.h = xs[xs.size() - 2];
  geo.w = xs[xs.size() - 1];
  geo.cout = ks[0];
  geo.kh = ks[2];
  geo.kw = ks[3];
  geo.stride = stride;
  geo.pad = pad;
  if (ks[1] != geo.cin) {
    throw ShapeError("conv2d channel mismatch: input " + shape_str(xs) + ", kernel " + shape_str(ks));
  }
  if (geo.kh > geo.h + 2 * pad || geo.kw > geo.w + 2 * pad) {
    throw ShapeError("conv2d kernel " + shape_str(ks) + " larger than padded input " + shape_str(xs));
  }
  geo.ho = (geo.h + 2 * pad - geo.kh) / stride + 1;
  geo.wo = (geo.w + 2 * pad - geo.kw) / stride + 1;

  const std::size_t patch = geo.cin * geo.kh * geo.kw;
  const std::size_t plane = geo.ho * geo.wo;
  Shape out_shape = geo.batched ? Shape{geo.batch, geo.cout, geo.ho, geo.wo} : Shape{geo.cout, geo.ho, geo.wo};
  Tensor<T> out(out_shape);
  std::vector<T> cols(patch * plane);
  ConstMatMap<T> K(kernel.value().raw(), geo.cout, patch);
  for (std::size_t b = 0; b < geo.batch; ++b) {
    im2col(x.value().raw() + b * geo.cin * geo.h * geo.w, geo, cols.data());
    MatMap<T>(out.raw() + b * geo.cout * plane, geo.cout, plane).noalias() =
        K * ConstMatMap<T>(cols.data(), patch, plane);
  }

  const std::size_t xid = x.id(), kid = kernel.id();
  return x.tape().record("conv2d", std::move(out), {x, kernel},
                         [=](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                           const bool need_x = t.requires_grad(xid);
                           const bool need_k = t.requires_grad(kid);
                           const T* xv = t.value(xid).raw();
                           ConstMatMap<T> Kb(t.value(kid).raw(), geo.cout, patch);
                           std::vector<T> col(patch * plane);
                           std::vector<T> dcol(need_x ? patch * plane : 0);
                           for (std::size_t b = 0; b < geo.batch; ++b) {
                             ConstMatMap<T> G(g.raw() + b * geo.cout * plane, geo.cout, plane);
                             if (need_k) {
                               im2col(xv + b * geo.cin * geo.h * geo.w, geo, col.data());
                               MatMap<T>(t.grad_buffer(kid).raw(), geo.cout, patch).noalias() +=
                                   G * ConstMatMap<T>(col.data(), patch, plane).transpose();
                             }
                             if (need_x) {
                               MatMap<T>(dcol.data(), patch, plane).noalias() = Kb.transpose() * G;
                               col2im_add(dcol.data(), geo, t.grad_buffer(xid).raw() + b * geo.cin * geo.h * geo.w);
                             }
                           }
                         });
}

template <typename T>
Var<T> avg_pool2(Var<T> x) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw ShapeError("avg_pool2 needs rank >= 2");
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  if (h % 2 || w % 2) throw ShapeError("avg_pool2 needs even spatial dims, got " + shape_str(s));
  const std::size_t planes = x.value().numel() / (h * w);
  Shape os = s;
  os[os.size() - 2] = h / 2;
  os[os.size() - 1] = w / 2;
  Tensor<T> out(os);
  const T* xv = x.value().raw();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < h / 2; ++y) {
      for (std::size_t xx = 0; xx < w / 2; ++xx) {
        const T* base = xv + p * h * w + 2 * y * w + 2 * xx;
        out[p * (h / 2) * (w / 2) + y * (w / 2) + xx] = T(0.25) * (base[0] + base[1] + base[w] + base[w + 1]);
      }
    }
  }
  const std::size_t xid = x.id();
  return x.tape().record("avg_pool2", std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
    T* gx = t.grad_buffer(xid).raw();
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t y = 0; y < h / 2; ++y) {
        for (std::size_t xx = 0; xx < w / 2; ++xx) {
          const T gv = T(0.25) * g[p * (h / 2) * (w / 2) + y * (w / 2) + xx];
          T* base = gx + p * h * w + 2 * y * w + 2 * xx;
          base[0] += gv;
          base[1] += gv;
          base[w] += gv;
          base[w + 1] += gv;
        }
      }
    }
  });
}

template <typename T>
Var<T> upsample2(Var<T> x) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw ShapeError("upsample2 needs rank >= 2");
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  const std::size_t planes = x.value().numel() / (h * w);
  Shape os = s;
  os[os.size() - 2] = 2 * h;
  os[os.size() - 1] = 2 * w;
  Tensor<T> out(os);
  const T* xv = x.value().raw();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t xx = 0; xx < 2 * w; ++xx) {
        out[(p * 2 * h + y) * 2 * w + xx] = xv[(p * h + y / 2) * w + xx / 2];
      }
    }
  }
  const std::size_t xid = x.id();
  return x.tape().record("upsample2", std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
    T* gx = t.grad_buffer(xid).raw();
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t y = 0; y < 2 * h; ++y) {
        for (std::size_t xx = 0; xx < 2 * w; ++xx) gx[(p * h + y / 2) * w + xx / 2] += g[(p * 2 * h + y) * 2 * w + xx];
      }
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const std::size_t xid = x.id();
  return x.tape().record("reshape", std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_buffer(xid);
    for (std::size_t i = 0, n = g.numel(); i < n; ++i) gx[i] += g[i];
  });
}

template <typename T>
Var<T> permute(Var<T> x, const std::vector<std::size_t>& order) {
  const std::size_t r = x.rank();
  std::vector<std::size_t> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  bool valid = sorted.size() == r;
  for (std::size_t i = 0; valid && i < r; ++i) valid = sorted[i] == i;
  if (!valid) throw ShapeError("permute order is not a permutation of the axes of " + shape_str(x.shape()));
  std::vector<std::size_t> inverse(r);
  for (std::size_t i = 0; i < r; ++i) inverse[order[i]] = i;
  Tensor<T> out = permute_raw(x.value(), order);
  const std::size_t xid = x.id();
  return x.tape().record("permute", std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
    accumulate(t.grad_buffer(xid), permute_raw(g, inverse));
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size()) throw ShapeError("concat axis out of range");
  out_shape[axis] = 0;
  for (const Var<T>& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == out_shape.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == out_shape[i];
    if (!ok) throw ShapeError("concat: incompatible shape " + shape_str(s));
    out_shape[axis] += s[axis];
  }
  const std::size_t outer = product(out_shape, 0, axis);
  const std::size_t inner = product(out_shape, axis + 1, out_shape.size());
  const std::size_t out_row = out_shape[axis] * inner;
  Tensor<T> out(out_shape);
  std::vector<std::size_t> ids, widths;
  std::size_t offset = 0;
  for (const Var<T>& p : parts) {
    const std::size_t width = p.shape()[axis] * inner;
    const T* src = p.value().raw();
    for (std::size_t o = 0; o < outer; ++o) std::copy(src + o * width, src + (o + 1) * width, out.raw() + o * out_row + offset);
    offset += width;
    ids.push_back(p.id());
    widths.push_back(width);
  }
  return parts[0].tape().record("concat", std::move(out), parts,
                                [=](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                                  std::size_t off = 0;
                                  for (std::size_t i = 0; i < ids.size(); ++i) {
                                    if (t.requires_grad(ids[i])) {
                                      T* gp = t.grad_buffer(ids[i]).raw();
                                      for (std::size_t o = 0; o < outer; ++o) {
                                        const T* src = g.raw() + o * out_row + off;
                                        for (std::size_t j = 0; j < widths[i]; ++j) gp[o * widths[i] + j] += src[j];
                                      }
                                    }
                                    off += widths[i];
                                  }
                                });
}

template <typename T>
Var<T> slice(Var<T> x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " of " + shape_str(s));
  }
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t outer = product(s, 0, axis);
  const std::size_t inner = product(s, axis + 1, s.size());
  const std::size_t in_row = s[axis] * inner;
  const std::size_t width = (end - begin) * inner;
  const std::size_t off = begin * inner;
  Tensor<T> out(out_shape);
  const T* src = x.value().raw();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(src + o * in_row + off, src + o * in_row + off + width, out.raw() + o * width);
  }
  const std::size_t xid = x.id();
  return x.tape().record("slice", std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
    T* gx = t.grad_buffer(xid).raw();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < width; ++j) gx[o * in_row + off + j] += g[o * width + j];
    }
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T total = 0;
  for (T v : x.value().data()) total += v;
  const std::size_t xid = x.id();
  return x.tape().record("sum", Tensor<T>::scalar(total), {x}, [=](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_buffer(xid);
    const T gv = g[0];
    for (T& v : gx.storage()) v += gv;
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T(1) / static_cast<T>(x.value().numel()));
}

#define MVDIFF_INSTANTIATE_OPS(T)                                                \
  template Var<T> matmul<T>(Var<T>, Var<T>, bool);                               \
  template Var<T> add<T>(Var<T>, Var<T>);                                        \
  template Var<T> sub<T>(Var<T>, Var<T>);                                        \
  template Var<T> mul<T>(Var<T>, Var<T>);                                        \
  template Var<T> scale<T>(Var<T>, T);                                           \
  template Var<T> square<T>(Var<T>);                                             \
  template Var<T> gelu<T>(Var<T>);                                               \
  template Var<T> silu<T>(Var<T>);                                               \
  template Var<T> softmax_rows<T>(Var<T>, Var<T>);                               \
  template Var<T> standardize_rows<T>(Var<T>, T);                                \
  template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, T);                      \
  template Var<T> channel_affine<T>(Var<T>, Var<T>, Var<T>);                     \
  template Var<T> group_norm<T>(Var<T>, std::size_t, Var<T>, Var<T>, T);         \
  template Var<T> conv2d<T>(Var<T>, Var<T>, std::size_t, std::size_t);           \
  template Var<T> avg_pool2<T>(Var<T>);                                          \
  template Var<T> upsample2<T>(Var<T>);                                          \
  template Var<T> reshape<T>(Var<T>, Shape);                                     \
  template Var<T> permute<T>(Var<T>, const std::vector<std::size_t>&);           \
  template Var<T> concat<T>(const std::vector<Var<T>>&, std::size_t);            \
  template Var<T> slice<T>(Var<T>, std::size_t, std::size_t, std::size_t);       \
  template Var<T> sum<T>(Var<T>);                                                \
  template Var<T> mean<T>(Var<T>);

MVDIFF_INSTANTIATE_OPS(float)
MVDIFF_INSTANTIATE_OPS(double)

#undef MVDIFF_INSTANTIATE_OPS

}  // namespace mvdiff::diff
