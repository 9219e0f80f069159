#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "swinlip/kernels.hpp"
#include "swinlip/rng.hpp"
#include "swinlip/tape.hpp"
#include "swinlip/tensor.hpp"

namespace swinlip {

// Differentiable tensor operations. Each op computes its value eagerly and,
// when any input is on a tape, records a node whose backward closure pushes
// gradients into the inputs.

namespace detail {

template <class T, class F>
Tensor<T> finish(Tensor<T> out, Tape<T>* tape, const char* op,
                 std::vector<std::size_t> inputs, F&& backward) {
  if (!tape) return out;
  return tape->record(std::move(out), op, std::move(inputs),
                      std::forward<F>(backward));
}

inline std::size_t norm_axis(long axis, std::size_t rank) {
  const long r = static_cast<long>(rank);
  const long a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r)
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  return static_cast<std::size_t>(a);
}

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
};

inline std::vector<std::size_t> aligned_strides(const Shape& in,
                                                const Shape& out) {
  std::vector<std::size_t> s(out.size(), 0);
  auto own = strides_of(in);
  const std::size_t off = out.size() - in.size();
  for (std::size_t i = 0; i < in.size(); ++i)
    s[off + i] = in[i] == 1 ? 0 : own[i];
  return s;
}

inline Broadcast broadcast(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ea = i + a.size() >= r ? a[i + a.size() - r] : 1;
    const std::size_t eb = i + b.size() >= r ? b[i + b.size() - r] : 1;
    if (ea != eb && ea != 1 && eb != 1)
      throw DimensionError("cannot broadcast " + to_string(a) + " with " +
                           to_string(b));
    out[i] = std::max(ea, eb);
  }
  return {out, aligned_strides(a, out), aligned_strides(b, out)};
}

// Odometer over `out`, calling f(linear_index, offset_a, offset_b).
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t r = out.size();
  if (r == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t inner = out[r - 1];
  const std::size_t ia = sa[r - 1];
  const std::size_t ib = sb[r - 1];
  const std::size_t outer = numel(out) / inner;
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0, i = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) f(i++, oa + j * ia, ob + j * ib);
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

}  // namespace detail

// Sums g over broadcast axes so the result has `shape`.
template <class T>
Tensor<T> sum_to(const Tensor<T>& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  if (shape.size() > g.rank())
    throw DimensionError("sum_to: cannot reduce " + to_string(g.shape()) +
                         " to " + to_string(shape));
  std::vector<T> out(numel(shape), T(0));
  auto sb = detail::aligned_strides(shape, g.shape());
  auto src = g.data();
  detail::for_each_broadcast(g.shape(), sb, sb,
                             [&](std::size_t i, std::size_t ob, std::size_t) {
                               out[ob] += src[i];
                             });
  return Tensor<T>(shape, std::move(out));
}

// ---------------------------------------------------------------- shape ops

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  Shape in = x.shape();
  Tensor<T> out = x.view(std::move(shape));
  return detail::finish(out, x.tape(), "reshape", {x.node()},
                        [x, in](const Tensor<T>& g, Tape<T>& tape) {
                          tape.accumulate(x, g.view(in));
                        });
}

namespace detail {

template <class T>
Tensor<T> permute_values(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  Shape out_shape(r);
  std::vector<std::size_t> src_stride(r);
  auto xs = strides_of(x.shape());
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = x.dim(axes[i]);
    src_stride[i] = xs[axes[i]];
  }
  std::vector<T> out(x.size());
  auto src = x.data();
  for_each_broadcast(out_shape, src_stride, src_stride,
                     [&](std::size_t i, std::size_t o, std::size_t) {
                       out[i] = src[o];
                     });
  return Tensor<T>(out_shape, std::move(out));
}

}  // namespace detail

template <class T>
Tensor<T> permute(const Tensor<T>& x, std::vector<std::size_t> axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r)
    throw DimensionError("permute: " + std::to_string(axes.size()) +
                         " axes for shape " + to_string(x.shape()));
  std::vector<std::size_t> inverse(r, r);
  for (std::size_t i = 0; i < r; ++i) {
    if (axes[i] >= r || inverse[axes[i]] != r)
      throw DimensionError("permute: axes are not a permutation");
    inverse[axes[i]] = i;
  }
  Tensor<T> out = detail::permute_values(x, axes);
  return detail::finish(out, x.tape(), "permute", {x.node()},
                        [x, inverse](const Tensor<T>& g, Tape<T>& tape) {
                          tape.accumulate(x, detail::permute_values(g, inverse));
                        });
}

template <class T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last2 needs rank >= 2");
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
  return permute(x, axes);
}

// Elements [start, start+len) along axis.
template <class T>
Tensor<T> slice_axis(const Tensor<T>& x, long axis_in, std::size_t start,
                     std::size_t len) {
  const std::size_t axis = detail::norm_axis(axis_in, x.rank());
  if (start + len > x.dim(axis) || len == 0)
    throw DimensionError("slice [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of range for " +
                         to_string(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  Shape shape = x.shape();
  shape[axis] = len;
  std::vector<T> out(outer * len * inner);
  auto src = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(src.begin() + (o * n + start) * inner, len * inner,
                out.begin() + o * len * inner);
  return detail::finish(
      Tensor<T>(shape, std::move(out)), x.tape(), "slice", {x.node()},
      [x, outer, inner, n, start, len](const Tensor<T>& g, Tape<T>& tape) {
        std::vector<T> gx(x.size(), T(0));
        auto gs = g.data();
        for (std::size_t o = 0; o < outer; ++o)
          std::copy_n(gs.begin() + o * len * inner, len * inner,
                      gx.begin() + (o * n + start) * inner);
        tape.accumulate(x, Tensor<T>(x.shape(), std::move(gx)));
      });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, long axis_in) {
  if (xs.empty()) throw DimensionError("concat of zero tensors");
  const std::size_t axis = detail::norm_axis(axis_in, xs[0].rank());
  Shape shape = xs[0].shape();
  shape[axis] = 0;
  for (const auto& x : xs) {
    Shape a = x.shape(), b = xs[0].shape();
    if (a.size() != b.size())
      throw DimensionError("concat rank mismatch");
    a[axis] = b[axis] = 0;
    if (a != b)
      throw DimensionError("concat shape mismatch " + to_string(x.shape()) +
                           " vs " + to_string(xs[0].shape()));
    shape[axis] += x.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  std::vector<T> out(numel(shape));
  std::size_t offset = 0;
  Tape<T>* tape = nullptr;
  std::vector<std::size_t> nodes;
  for (const auto& x : xs) {
    const std::size_t n = x.dim(axis);
    auto src = x.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(src.begin() + o * n * inner, n * inner,
                  out.begin() + (o * shape[axis] + offset) * inner);
    offset += n;
    if (x.tape()) {
      if (tape && tape != x.tape()) throw TapeError("concat across tapes");
      tape = x.tape();
    }
    nodes.push_back(x.node());
  }
  return detail::finish(
      Tensor<T>(shape, std::move(out)), tape, "concat", nodes,
      [xs, axis](const Tensor<T>& g, Tape<T>& tape) {
        std::size_t start = 0;
        for (const auto& x : xs) {
          if (x.tape() == &tape)
            tape.accumulate(x, slice_axis(g.detached(), long(axis), start,
                                          x.dim(axis)));
          start += x.dim(axis);
        }
      });
}

// torch.roll semantics: out[i] = x[(i - shift) mod n] along axis.
template <class T>
Tensor<T> roll(const Tensor<T>& x, long axis_in, long shift) {
  const std::size_t axis = detail::norm_axis(axis_in, x.rank());
  const long n = static_cast<long>(x.dim(axis));
  const long s = ((shift % n) + n) % n;
  if (s == 0) return x;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  std::vector<T> out(x.size());
  auto src = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (long i = 0; i < n; ++i) {
      const long from = (i - s + n) % n;
      std::copy_n(src.begin() + (o * n + from) * inner, inner,
                  out.begin() + (o * n + i) * inner);
    }
  return detail::finish(Tensor<T>(x.shape(), std::move(out)), x.tape(), "roll",
                        {x.node()},
                        [x, axis, shift](const Tensor<T>& g, Tape<T>& tape) {
                          tape.accumulate(x, roll(g.detached(), long(axis), -shift));
                        });
}

// Rows of table[R, C] selected by index -> [index.size(), C].
template <class T>
Tensor<T> gather_rows(const Tensor<T>& table, std::vector<std::size_t> index) {
  if (table.rank() != 2) throw DimensionError("gather_rows needs a 2-d table");
  const std::size_t rows = table.dim(0), cols = table.dim(1);
  std::vector<T> out(index.size() * cols);
  auto src = table.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows)
      throw DimensionError("gather_rows index " + std::to_string(index[i]) +
                           " out of range " + std::to_string(rows));
    std::copy_n(src.begin() + index[i] * cols, cols, out.begin() + i * cols);
  }
  Tensor<T> result({index.size(), cols}, std::move(out));
  return detail::finish(
      std::move(result), table.tape(), "gather_rows",
      {table.node()},
      [table, index = std::move(index), cols](const Tensor<T>& g, Tape<T>& tape) {
        std::vector<T> gt(table.size(), T(0));
        auto gs = g.data();
        for (std::size_t i = 0; i < index.size(); ++i)
          for (std::size_t c = 0; c < cols; ++c)
            gt[index[i] * cols + c] += gs[i * cols + c];
        tape.accumulate(table, Tensor<T>(table.shape(), std::move(gt)));
      });
}

// x[..., L, 2L-1] -> out[..., L, L] with out[i][j] = x[i][L-1-i+j]. Column p
// of x holds relative offset (L-1) - p, so out[i][j] sees offset i - j.
template <class T>
Tensor<T> rel_shift(const Tensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("rel_shift needs rank >= 2");
  const std::size_t L = x.dim(x.rank() - 2);
  if (x.dim(x.rank() - 1) != 2 * L - 1)
    throw DimensionError("rel_shift expects [..., L, 2L-1], got " +
                         to_string(x.shape()));
  const std::size_t P = 2 * L - 1;
  const std::size_t batch = x.size() / (L * P);
  Shape shape = x.shape();
  shape.back() = L;
  std::vector<T> out(batch * L * L);
  auto src = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < L; ++j)
        out[(b * L + i) * L + j] = src[(b * L + i) * P + (L - 1 - i + j)];
  return detail::finish(Tensor<T>(shape, std::move(out)), x.tape(), "rel_shift",
                        {x.node()},
                        [x, L, P, batch](const Tensor<T>& g, Tape<T>& tape) {
                          std::vector<T> gx(x.size(), T(0));
                          auto gs = g.data();
                          for (std::size_t b = 0; b < batch; ++b)
                            for (std::size_t i = 0; i < L; ++i)
                              for (std::size_t j = 0; j < L; ++j)
                                gx[(b * L + i) * P + (L - 1 - i + j)] +=
                                    gs[(b * L + i) * L + j];
                          tape.accumulate(x, Tensor<T>(x.shape(), std::move(gx)));
                        });
}

// ---------------------------------------------------------- elementwise ops

namespace detail {

enum class BinaryKind { add, sub, mul };

template <class T>
Tensor<T> binary_values(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind) {
  auto apply = [kind](T x, T y) {
    switch (kind) {
      case BinaryKind::add: return x + y;
      case BinaryKind::sub: return x - y;
      default: return x * y;
    }
  };
  auto pa = a.data();
  auto pb = b.data();
  if (a.shape() == b.shape()) {
    std::vector<T> out(a.size());
    if (kind == BinaryKind::add)
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
    else if (kind == BinaryKind::sub)
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] - pb[i];
    else
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
    return Tensor<T>(a.shape(), std::move(out));
  }
  auto bc = broadcast(a.shape(), b.shape());
  // b matches the trailing extents of a: the bias / per-channel case.
  const bool suffix = bc.out == a.shape() && b.rank() <= a.rank() &&
                      std::equal(b.shape().begin(), b.shape().end(),
                                 a.shape().end() - b.rank());
  std::vector<T> out(numel(bc.out));
  if (suffix) {
    const std::size_t n = b.size();
    for (std::size_t o = 0; o < out.size(); o += n)
      for (std::size_t j = 0; j < n; ++j) out[o + j] = apply(pa[o + j], pb[j]);
  } else {
    for_each_broadcast(bc.out, bc.stride_a, bc.stride_b,
                       [&](std::size_t i, std::size_t ia, std::size_t ib) {
                         out[i] = apply(pa[ia], pb[ib]);
                       });
  }
  return Tensor<T>(bc.out, std::move(out));
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out = detail::binary_values(a, b, detail::BinaryKind::add);
  return detail::finish(out, detail::common_tape(a, b), "add",
                        {a.node(), b.node()},
                        [a, b](const Tensor<T>& g, Tape<T>& tape) {
                          if (a.tape() == &tape) tape.accumulate(a, sum_to(g, a.shape()));
                          if (b.tape() == &tape) tape.accumulate(b, sum_to(g, b.shape()));
                        });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out = detail::binary_values(a, b, detail::BinaryKind::sub);
  return detail::finish(
      out, detail::common_tape(a, b), "sub", {a.node(), b.node()},
      [a, b](const Tensor<T>& g, Tape<T>& tape) {
        if (a.tape() == &tape) tape.accumulate(a, sum_to(g, a.shape()));
        if (b.tape() == &tape) {
          std::vector<T> neg(g.data().begin(), g.data().end());
          for (auto& v : neg) v = -v;
          tape.accumulate(b, sum_to(Tensor<T>(g.shape(), std::move(neg)), b.shape()));
        }
      });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out = detail::binary_values(a, b, detail::BinaryKind::mul);
  return detail::finish(
      out, detail::common_tape(a, b), "mul", {a.node(), b.node()},
      [a, b](const Tensor<T>& g, Tape<T>& tape) {
        const auto mul_ = detail::BinaryKind::mul;
        if (a.tape() == &tape)
          tape.accumulate(a, sum_to(detail::binary_values(g, b.detached(), mul_), a.shape()));
        if (b.tape() == &tape)
          tape.accumulate(b, sum_to(detail::binary_values(g, a.detached(), mul_), b.shape()));
      });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return detail::finish(Tensor<T>(x.shape(), std::move(out)), x.tape(), "scale",
                        {x.node()},
                        [x, factor](const Tensor<T>& g, Tape<T>& tape) {
                          tape.accumulate(x, scale(g.detached(), factor));
                        });
}

namespace detail {

// Pointwise unary op given value and derivative functors of the input.
template <class T, class F, class D>
Tensor<T> unary(const Tensor<T>& x, const char* name, F f, D df) {
  auto src = x.data();
  std::vector<T> out(src.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(src[i]);
  return finish(Tensor<T>(x.shape(), std::move(out)), x.tape(), name, {x.node()},
                [x, df](const Tensor<T>& g, Tape<T>& tape) {
                  auto xs = x.data();
                  auto gs = g.data();
                  std::vector<T> gx(xs.size());
                  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = gs[i] * df(xs[i]);
                  tape.accumulate(x, Tensor<T>(x.shape(), std::move(gx)));
                });
}

template <class T>
T sigmoid_value(T v) {
  return v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

}  // namespace detail

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(
      x, "relu", [](T v) { return v > 0 ? v : T(0); },
      [](T v) { return v > 0 ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x, "sigmoid", [](T v) { return detail::sigmoid_value(v); },
      [](T v) {
        const T s = detail::sigmoid_value(v);
        return s * (T(1) - s);
      });
}

// x * sigmoid(x)
template <class T>
Tensor<T> swish(const Tensor<T>& x) {
  return detail::unary(
      x, "swish", [](T v) { return v * detail::sigmoid_value(v); },
      [](T v) {
        const T s = detail::sigmoid_value(v);
        return s * (T(1) + v * (T(1) - s));
      });
}

// Exact (erf) GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt2pi = T(0.39894228040143267794);
  return detail::unary(
      x, "gelu", [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v) {
        return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) +
               v * inv_sqrt2pi * std::exp(T(-0.5) * v * v);
      });
}

// Per-channel slope over the last axis.
template <class T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& slope) {
  const std::size_t c = x.dim(x.rank() - 1);
  if (slope.size() != c)
    throw DimensionError("prelu slope of size " + std::to_string(slope.size()) +
                         " for " + std::to_string(c) + " channels");
  auto xs = x.data();
  auto a = slope.data();
  std::vector<T> out(x.size());
  const T* src = xs.data();
  const T* slopes = a.data();
  T* dst = out.data();
  for (std::size_t r = 0; r < out.size(); r += c)
    for (std::size_t j = 0; j < c; ++j) {
      const T v = src[r + j];
      dst[r + j] = std::max(v, T(0)) + slopes[j] * std::min(v, T(0));
    }
  return detail::finish(
      Tensor<T>(x.shape(), std::move(out)), detail::common_tape(x, slope), "prelu",
      {x.node(), slope.node()}, [x, slope, c](const Tensor<T>& g, Tape<T>& tape) {
        auto xs = x.data();
        auto a = slope.data();
        auto gs = g.data();
        std::vector<T> gx(x.size()), ga(c, T(0));
        for (std::size_t r = 0; r < gx.size(); r += c)
          for (std::size_t j = 0; j < c; ++j) {
            const std::size_t i = r + j;
            const bool pos = xs[i] >= 0;
            gx[i] = pos ? gs[i] : gs[i] * a[j];
            ga[j] += pos ? T(0) : gs[i] * xs[i];
          }
        tape.accumulate(x, Tensor<T>(x.shape(), std::move(gx)));
        tape.accumulate(slope, Tensor<T>(slope.shape(), std::move(ga)));
      });
}

// Gated linear unit over the last axis: first half * sigmoid(second half).
template <class T>
Tensor<T> glu(const Tensor<T>& x) {
  const std::size_t c2 = x.dim(x.rank() - 1);
  if (c2 % 2 != 0)
    throw DimensionError("glu needs an even channel count, got " + std::to_string(c2));
  const std::size_t c = c2 / 2;
  const std::size_t rows = x.size() / c2;
  Shape shape = x.shape();
  shape.back() = c;
  auto xs = x.data();
  std::vector<T> out(rows * c);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j)
      out[r * c + j] = xs[r * c2 + j] * detail::sigmoid_value(xs[r * c2 + c + j]);
  return detail::finish(Tensor<T>(shape, std::move(out)), x.tape(), "glu", {x.node()},
                        [x, rows, c, c2](const Tensor<T>& g, Tape<T>& tape) {
                          auto xs = x.data();
                          auto gs = g.data();
                          std::vector<T> gx(x.size());
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t j = 0; j < c; ++j) {
                              const T a = xs[r * c2 + j];
                              const T s = detail::sigmoid_value(xs[r * c2 + c + j]);
                              const T gv = gs[r * c + j];
                              gx[r * c2 + j] = gv * s;
                              gx[r * c2 + c + j] = gv * a * s * (T(1) - s);
                            }
                          tape.accumulate(x, Tensor<T>(x.shape(), std::move(gx)));
                        });
}

// Inverted dropout. Identity when not training or rate == 0.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng* rng, bool training) {
  if (!training || rate <= 0.0) return x;
  if (!rng) throw ConfigError("dropout in training mode needs an Rng");
  if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
  const T keep = T(1) / T(1 - rate);
  std::vector<T> mask(x.size());
  for (auto& m : mask) m = rng->uniform() < rate ? T(0) : keep;
  return mul(x, Tensor<T>(x.shape(), std::move(mask)));
}

// -------------------------------------------------------------- reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  return detail::finish(Tensor<T>::scalar(s), x.tape(), "sum", {x.node()},
                        [x](const Tensor<T>& g, Tape<T>& tape) {
                          tape.accumulate(x, Tensor<T>(x.shape(), g.item()));
                        });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / T(x.size()));
}

// Mean over one axis, which is removed.
template <class T>
Tensor<T> mean_axis(const Tensor<T>& x, long axis_in) {
  const std::size_t axis = detail::norm_axis(axis_in, x.rank());
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + long(axis));
  std::vector<T> out(outer * inner, T(0));
  auto src = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += src[(o * n + k) * inner + i];
  for (auto& v : out) v /= T(n);
  return detail::finish(Tensor<T>(shape, std::move(out)), x.tape(), "mean_axis",
                        {x.node()},
                        [x, outer, inner, n](const Tensor<T>& g, Tape<T>& tape) {
                          std::vector<T> gx(x.size());
                          auto gs = g.data();
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t k = 0; k < n; ++k)
                              for (std::size_t i = 0; i < inner; ++i)
                                gx[(o * n + k) * inner + i] = gs[o * inner + i] / T(n);
                          tape.accumulate(x, Tensor<T>(x.shape(), std::move(gx)));
                        });
}

// Numerically stable softmax (max subtraction) along an axis.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, long axis_in = -1) {
  const std::size_t axis = detail::norm_axis(axis_in, x.rank());
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  auto src = x.data();
  std::vector<T> out(x.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      T m = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < n; ++k) m = std::max(m, src[base + k * inner]);
      T s = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const T e = std::exp(src[base + k * inner] - m);
        out[base + k * inner] = e;
        s += e;
      }
      const T inv = T(1) / s;
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] *= inv;
    }
  Tensor<T> y(x.shape(), std::move(out));
  return detail::finish(y, x.tape(), "softmax", {x.node()},
                        [x, y, outer, inner, n](const Tensor<T>& g, Tape<T>& tape) {
                          auto ys = y.data();
                          auto gs = g.data();
                          std::vector<T> gx(x.size());
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t i = 0; i < inner; ++i) {
                              const std::size_t base = o * n * inner + i;
                              T dot = 0;
                              for (std::size_t k = 0; k < n; ++k)
                                dot += gs[base + k * inner] * ys[base + k * inner];
                              for (std::size_t k = 0; k < n; ++k)
                                gx[base + k * inner] =
                                    ys[base + k * inner] * (gs[base + k * inner] - dot);
                            }
                          tape.accumulate(x, Tensor<T>(x.shape(), std::move(gx)));
                        });
}

// Mean cross-entropy of logits[N, K] against integer labels.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::vector<std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw DimensionError("cross_entropy expects [N,K] logits with N labels, got " +
                         to_string(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  auto src = logits.data();
  std::vector<T> prob(logits.size());
  T loss = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] >= k) throw DimensionError("label out of range");
    T m = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < k; ++j) m = std::max(m, src[r * k + j]);
    T s = 0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(src[r * k + j] - m);
    const T lse = m + std::log(s);
    for (std::size_t j = 0; j < k; ++j) prob[r * k + j] = std::exp(src[r * k + j] - lse);
    loss += lse - src[r * k + labels[r]];
  }
  loss /= T(n);
  return detail::finish(
      Tensor<T>::scalar(loss), logits.tape(), "cross_entropy", {logits.node()},
      [logits, prob = std::move(prob), labels = std::move(labels), n, k](
          const Tensor<T>& g, Tape<T>& tape) {
        std::vector<T> gx(prob);
        for (std::size_t r = 0; r < n; ++r) gx[r * k + labels[r]] -= T(1);
        const T f = g.item() / T(n);
        for (auto& v : gx) v *= f;
        tape.accumulate(logits, Tensor<T>(logits.shape(), std::move(gx)));
      });
}

// ----------------------------------------------------------- linear algebra

namespace detail {

template <class T>
std::vector<T> transposed(std::size_t rows, std::size_t cols, const T* src) {
  std::vector<T> out(rows * cols);
  kernels::transpose(rows, cols, src, out.data());
  return out;
}

}  // namespace detail

/// Batched matrix product [..., m, k] x [..., k, n]. Leading dimensions must
/// match, or one operand may be a plain matrix that is broadcast.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw DimensionError("matmul needs rank >= 2 operands, got " +
                         to_string(a.shape()) + " and " + to_string(b.shape()));
  const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t n = b.dim(b.rank() - 1);
  Shape lead_a(a.shape().begin(), a.shape().end() - 2);
  Shape lead_b(b.shape().begin(), b.shape().end() - 2);
  if (b.dim(b.rank() - 2) != k || (!lead_a.empty() && !lead_b.empty() && lead_a != lead_b))
    throw DimensionError("matmul shape mismatch " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  const Shape& lead = lead_a.empty() ? lead_b : lead_a;
  const std::size_t batch = numel(lead);
  const bool bcast_a = lead_a.empty() && batch > 1;
  const bool bcast_b = lead_b.empty() && batch > 1;
  Shape shape = lead;
  shape.push_back(m);
  shape.push_back(n);
  std::vector<T> out(batch * m * n, T(0));
  auto pa = a.data();
  auto pb = b.data();
  if (bcast_b) {
    // Fold the batch into rows: one large product.
    kernels::gemm(batch * m, n, k, pa.data(), k, pb.data(), n, out.data(), n);
  } else {
    for (std::size_t i = 0; i < batch; ++i)
      kernels::gemm(m, n, k, pa.data() + (bcast_a ? 0 : i * m * k), k,
                    pb.data() + i * k * n, n, out.data() + i * m * n, n);
  }
  return detail::finish(
      Tensor<T>(shape, std::move(out)), detail::common_tape(a, b), "matmul",
      {a.node(), b.node()},
      [a, b, batch, m, n, k, bcast_a, bcast_b](const Tensor<T>& g, Tape<T>& tape) {
        auto gs = g.data();
        auto pa = a.data();
        auto pb = b.data();
        if (a.tape() == &tape) {
          std::vector<T> ga(a.size(), T(0));
          for (std::size_t i = 0; i < batch; ++i) {
            auto bt = detail::transposed(k, n, pb.data() + (bcast_b ? 0 : i * k * n));
            kernels::gemm(m, k, n, gs.data() + i * m * n, n, bt.data(), k,
                          ga.data() + (bcast_a ? 0 : i * m * k), k);
          }
          tape.accumulate(a, Tensor<T>(a.shape(), std::move(ga)));
        }
        if (b.tape() == &tape) {
          std::vector<T> gb(b.size(), T(0));
          if (bcast_b) {
            auto at = detail::transposed(batch * m, k, pa.data());
            kernels::gemm(k, n, batch * m, at.data(), batch * m, gs.data(), n,
                          gb.data(), n);
          } else {
            for (std::size_t i = 0; i < batch; ++i) {
              auto at = detail::transposed(m, k, pa.data() + (bcast_a ? 0 : i * m * k));
              kernels::gemm(k, n, m, at.data(), m, gs.data() + i * m * n, n,
                            gb.data() + i * k * n, n);
            }
          }
          tape.accumulate(b, Tensor<T>(b.shape(), std::move(gb)));
        }
      });
}

/// y = x w + bias over the last axis; w is [in, out], bias [out] or empty.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w,
                 const std::type_identity_t<Tensor<T>>* bias = nullptr) {
  if (w.rank() != 2 || x.dim(x.rank() - 1) != w.dim(0))
    throw DimensionError("linear: input " + to_string(x.shape()) +
                         " does not conform to weight " + to_string(w.shape()));
  const std::size_t in = w.dim(0), outf = w.dim(1);
  if (bias && (bias->rank() != 1 || bias->dim(0) != outf))
    throw DimensionError("linear: bias " + to_string(bias->shape()) +
                         " for " + std::to_string(outf) + " outputs");
  const std::size_t rows = x.size() / in;
  Shape shape = x.shape();
  shape.back() = outf;
  std::vector<T> out(rows * outf, T(0));
  if (bias) {
    auto bs = bias->data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(bs.begin(), bs.end(), out.begin() + r * outf);
  }
  kernels::gemm(rows, outf, in, x.data().data(), in, w.data().data(), outf,
                out.data(), outf);
  Tensor<T> b = bias ? *bias : Tensor<T>();
  const bool has_bias = bias != nullptr;
  Tape<T>* tape = has_bias ? detail::common_tape(x, w, b) : detail::common_tape(x, w);
  return detail::finish(
      Tensor<T>(shape, std::move(out)), tape, "linear",
      {x.node(), w.node(), b.node()},
      [x, w, b, has_bias, rows, in, outf](const Tensor<T>& g, Tape<T>& tape) {
        auto gs = g.data();
        if (x.tape() == &tape) {
          auto wt = detail::transposed(in, outf, w.data().data());
          std::vector<T> gx(x.size(), T(0));
          kernels::gemm(rows, in, outf, gs.data(), outf, wt.data(), in, gx.data(), in);
          tape.accumulate(x, Tensor<T>(x.shape(), std::move(gx)));
        }
        if (w.tape() == &tape) {
          auto xt = detail::transposed(rows, in, x.data().data());
          std::vector<T> gw(w.size(), T(0));
          kernels::gemm(in, outf, rows, xt.data(), rows, gs.data(), outf, gw.data(), outf);
          tape.accumulate(w, Tensor<T>(w.shape(), std::move(gw)));
        }
        if (has_bias && b.tape() == &tape) {
          std::vector<T> gb(outf, T(0));
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < outf; ++j) gb[j] += gs[r * outf + j];
          tape.accumulate(b, Tensor<T>(b.shape(), std::move(gb)));
        }
      });
}

// ------------------------------------------------------------ normalization

/// Normalizes the last axis, then applies per-feature scale and offset.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5)) {
  const std::size_t c = x.dim(x.rank() - 1);
  if (gamma.size() != c || beta.size() != c)
    throw DimensionError("layer_norm parameters do not match " +
                         std::to_string(c) + " features");
  const std::size_t rows = x.size() / c;
  auto xs = x.data();
  auto gm = gamma.data();
  auto bt = beta.data();
  std::vector<T> out(x.size()), xhat(x.size()), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xs.data() + r * c;
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= T(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(c);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[r * c + j] = (row[j] - mu) * rstd[r];
      out[r * c + j] = xhat[r * c + j] * gm[j] + bt[j];
    }
  }
  return detail::finish(
      Tensor<T>(x.shape(), std::move(out)), detail::common_tape(x, gamma, beta),
      "layer_norm", {x.node(), gamma.node(), beta.node()},
      [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd), rows, c](
          const Tensor<T>& g, Tape<T>& tape) {
        auto gs = g.data();
        auto gm = gamma.data();
        std::vector<T> gx(x.size()), gg(c, T(0)), gb(c, T(0));
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_gh = 0, mean_ghx = 0;
          for (std::size_t j = 0; j < c; ++j) {
            const T gh = gs[r * c + j] * gm[j];
            mean_gh += gh;
            mean_ghx += gh * xhat[r * c + j];
            gg[j] += gs[r * c + j] * xhat[r * c + j];
            gb[j] += gs[r * c + j];
          }
          mean_gh /= T(c);
          mean_ghx /= T(c);
          for (std::size_t j = 0; j < c; ++j)
            gx[r * c + j] = rstd[r] * (gs[r * c + j] * gm[j] - mean_gh -
                                       xhat[r * c + j] * mean_ghx);
        }
        tape.accumulate(x, Tensor<T>(x.shape(), std::move(gx)));
        tape.accumulate(gamma, Tensor<T>(gamma.shape(), std::move(gg)));
        tape.accumulate(beta, Tensor<T>(beta.shape(), std::move(gb)));
      });
}

/// Channels-last batch norm: statistics over every axis but the last.
/// Training mode normalizes with batch statistics and updates the running
/// buffers in place (momentum-weighted, unbiased variance); eval mode uses
/// the running buffers.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, Tensor<T> running_mean,
                     Tensor<T> running_var, bool training, T momentum = T(0.1),
                     T eps = T(1e-5)) {
  const std::size_t c = x.dim(x.rank() - 1);
  if (gamma.size() != c || beta.size() != c || running_mean.size() != c ||
      running_var.size() != c)
    throw DimensionError("batch_norm parameters do not match " +
                         std::to_string(c) + " channels");
  const std::size_t rows = x.size() / c;
  auto xs = x.data();
  std::vector<T> mu(c, T(0)), var(c, T(0));
  if (training) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) mu[j] += xs[r * c + j];
    for (auto& v : mu) v /= T(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        const T d = xs[r * c + j] - mu[j];
        var[j] += d * d;
      }
    for (auto& v : var) v /= T(rows);
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    const T unbias = rows > 1 ? T(rows) / T(rows - 1) : T(1);
    for (std::size_t j = 0; j < c; ++j) {
      rm[j] = (T(1) - momentum) * rm[j] + momentum * mu[j];
      rv[j] = (T(1) - momentum) * rv[j] + momentum * var[j] * unbias;
    }
  } else {
    std::copy(running_mean.data().begin(), running_mean.data().end(), mu.begin());
    std::copy(running_var.data().begin(), running_var.data().end(), var.begin());
  }
  std::vector<T> rstd(c);
  for (std::size_t j = 0; j < c; ++j) rstd[j] = T(1) / std::sqrt(var[j] + eps);
  auto gm = gamma.data();
  auto bt = beta.data();
  Tape<T>* tape = detail::common_tape(x, gamma, beta);
  std::vector<T> xhat(tape ? x.size() : 0), out(x.size());
  if (!tape) {
    std::vector<T> sc(c), sh(c);
    for (std::size_t j = 0; j < c; ++j) {
      sc[j] = rstd[j] * gm[j];
      sh[j] = bt[j] - mu[j] * sc[j];
    }
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) out[r * c + j] = xs[r * c + j] * sc[j] + sh[j];
    return Tensor<T>(x.shape(), std::move(out));
  }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      xhat[r * c + j] = (xs[r * c + j] - mu[j]) * rstd[j];
      out[r * c + j] = xhat[r * c + j] * gm[j] + bt[j];
    }
  return detail::finish(
      Tensor<T>(x.shape(), std::move(out)), tape,
      "batch_norm", {x.node(), gamma.node(), beta.node()},
      [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd), rows, c,
       training](const Tensor<T>& g, Tape<T>& tape) {
        auto gs = g.data();
        auto gm = gamma.data();
        std::vector<T> gg(c, T(0)), gb(c, T(0));
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            gg[j] += gs[r * c + j] * xhat[r * c + j];
            gb[j] += gs[r * c + j];
          }
        std::vector<T> gx(x.size());
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            if (training)
              gx[r * c + j] = gm[j] * rstd[j] / T(rows) *
                              (T(rows) * gs[r * c + j] - gb[j] - xhat[r * c + j] * gg[j]);
            else
              gx[r * c + j] = gs[r * c + j] * gm[j] * rstd[j];
          }
        tape.accumulate(x, Tensor<T>(x.shape(), std::move(gx)));
        tape.accumulate(gamma, Tensor<T>(gamma.shape(), std::move(gg)));
        tape.accumulate(beta, Tensor<T>(beta.shape(), std::move(gb)));
      });
}

}  // namespace swinlip
