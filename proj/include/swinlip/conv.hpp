#pragma once

#include <array>
#include <limits>
#include <vector>

#include "swinlip/ops.hpp"

namespace swinlip {

// Convolutions use the cross-correlation convention (no kernel flip) and
// channels-last layouts.

using Extent3 = std::array<std::size_t, 3>;

struct Pad2 {
  std::size_t top = 0, bottom = 0, left = 0, right = 0;
};

namespace detail {

inline std::size_t conv_extent(std::size_t in, std::size_t pad_lo,
                               std::size_t pad_hi, std::size_t k,
                               std::size_t stride, const char* axis) {
  if (stride == 0) throw ConfigError(std::string("zero stride on axis ") + axis);
  if (in + pad_lo + pad_hi < k)
    throw ConfigError(std::string("kernel extent ") + std::to_string(k) +
                      " exceeds padded input extent " +
                      std::to_string(in + pad_lo + pad_hi) + " on axis " + axis);
  return (in + pad_lo + pad_hi - k) / stride + 1;
}

}  // namespace detail

/// x[T,H,W,Cin] * w[kT,kH,kW,Cin,Cout] + bias[Cout] with symmetric padding.
/// Evaluated frame by frame as im2col followed by a matrix product.
template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w,
                 const std::type_identity_t<Tensor<T>>* bias, Extent3 stride, Extent3 pad) {
  if (x.rank() != 4 || w.rank() != 5 || w.dim(3) != x.dim(3))
    throw DimensionError("conv3d: input " + to_string(x.shape()) +
                         " does not conform to kernel " + to_string(w.shape()));
  const std::size_t T_ = x.dim(0), H = x.dim(1), W = x.dim(2), cin = x.dim(3);
  const std::size_t kt = w.dim(0), kh = w.dim(1), kw = w.dim(2), cout = w.dim(4);
  if (bias && bias->size() != cout)
    throw DimensionError("conv3d: bias size does not match output channels");
  const std::size_t To = detail::conv_extent(T_, pad[0], pad[0], kt, stride[0], "T");
  const std::size_t Ho = detail::conv_extent(H, pad[1], pad[1], kh, stride[1], "H");
  const std::size_t Wo = detail::conv_extent(W, pad[2], pad[2], kw, stride[2], "W");
  const std::size_t K = kt * kh * kw * cin;
  const std::size_t P = Ho * Wo;

  // Patch matrix [Ho*Wo, K] for output frame `to`.
  auto im2col = [=](std::span<const T> src, std::size_t to, std::vector<T>& cols) {
    cols.assign(P * K, T(0));
    for (std::size_t oh = 0; oh < Ho; ++oh)
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        T* row = cols.data() + (oh * Wo + ow) * K;
        for (std::size_t dt = 0; dt < kt; ++dt) {
          const long it = long(to * stride[0] + dt) - long(pad[0]);
          if (it < 0 || it >= long(T_)) continue;
          for (std::size_t dh = 0; dh < kh; ++dh) {
            const long ih = long(oh * stride[1] + dh) - long(pad[1]);
            if (ih < 0 || ih >= long(H)) continue;
            const T* line = src.data() + (std::size_t(it) * H + std::size_t(ih)) * W * cin;
            T* dst = row + (dt * kh + dh) * kw * cin;
            if (stride[2] == 1) {
              // Valid taps form one contiguous run of the input row.
              const long first = long(ow) - long(pad[2]);
              const long lo = std::max(0L, -first);
              const long hi = std::min(long(kw), long(W) - first);
              if (lo < hi)
                std::copy_n(line + std::size_t(first + lo) * cin, std::size_t(hi - lo) * cin,
                            dst + std::size_t(lo) * cin);
              continue;
            }
            for (std::size_t dw = 0; dw < kw; ++dw) {
              const long iw = long(ow * stride[2] + dw) - long(pad[2]);
              if (iw < 0 || iw >= long(W)) continue;
              std::copy_n(line + std::size_t(iw) * cin, cin, dst + dw * cin);
            }
          }
        }
      }
  };

  std::vector<T> out(To * P * cout, T(0));
  if (bias)
    for (std::size_t r = 0; r < To * P; ++r)
      std::copy(bias->data().begin(), bias->data().end(), out.begin() + r * cout);
  std::vector<T> cols;
  for (std::size_t to = 0; to < To; ++to) {
    im2col(x.data(), to, cols);
    kernels::gemm(P, cout, K, cols.data(), K, w.data().data(), cout,
                  out.data() + to * P * cout, cout);
  }
  Tensor<T> b = bias ? *bias : Tensor<T>();
  const bool has_bias = bias != nullptr;
  Tape<T>* tape = has_bias ? detail::common_tape(x, w, b) : detail::common_tape(x, w);
  return detail::finish(
      Tensor<T>({To, Ho, Wo, cout}, std::move(out)), tape, "conv3d",
      {x.node(), w.node(), b.node()},
      [=](const Tensor<T>& g, Tape<T>& tape) {
        auto gs = g.data();
        const bool want_x = x.tape() == &tape;
        const bool want_w = w.tape() == &tape;
        std::vector<T> gx(want_x ? x.size() : 0, T(0));
        std::vector<T> gw(want_w ? w.size() : 0, T(0));
        std::vector<T> wt;
        if (want_x) wt = detail::transposed(K, cout, w.data().data());
        std::vector<T> cols, gcols, gwt(want_w ? cout * K : 0, T(0));
        for (std::size_t to = 0; to < To; ++to) {
          const T* gframe = gs.data() + to * P * cout;
          if (want_w) {
            // gw^T[cout, K] += g^T[cout, P] * cols[P, K]
            im2col(x.data(), to, cols);
            const std::vector<T> gt = detail::transposed(P, cout, gframe);
            kernels::gemm(cout, K, P, gt.data(), P, cols.data(), K, gwt.data(), K);
          }
          if (want_x) {
            gcols.assign(P * K, T(0));
            kernels::gemm(P, K, cout, gframe, cout, wt.data(), K, gcols.data(), K);
            for (std::size_t oh = 0; oh < Ho; ++oh)
              for (std::size_t ow = 0; ow < Wo; ++ow) {
                const T* row = gcols.data() + (oh * Wo + ow) * K;
                for (std::size_t dt = 0; dt < kt; ++dt) {
                  const long it = long(to * stride[0] + dt) - long(pad[0]);
                  if (it < 0 || it >= long(T_)) continue;
                  for (std::size_t dh = 0; dh < kh; ++dh) {
                    const long ih = long(oh * stride[1] + dh) - long(pad[1]);
                    if (ih < 0 || ih >= long(H)) continue;
                    for (std::size_t dw = 0; dw < kw; ++dw) {
                      const long iw = long(ow * stride[2] + dw) - long(pad[2]);
                      if (iw < 0 || iw >= long(W)) continue;
                      T* dst = gx.data() + ((std::size_t(it) * H + std::size_t(ih)) * W +
                                            std::size_t(iw)) * cin;
                      const T* s = row + ((dt * kh + dh) * kw + dw) * cin;
                      for (std::size_t c = 0; c < cin; ++c) dst[c] += s[c];
                    }
                  }
                }
              }
          }
        }
        if (want_x) tape.accumulate(x, Tensor<T>(x.shape(), std::move(gx)));
        if (want_w) {
          kernels::transpose(cout, K, gwt.data(), gw.data());
          tape.accumulate(w, Tensor<T>(w.shape(), std::move(gw)));
        }
        if (has_bias && b.tape() == &tape) tape.accumulate(b, sum_to(g, b.shape()));
      });
}

/// Batched channels-last 2-d convolution: x[N,H,W,Cin], w[kH,kW,Cin/groups,Cout].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w,
                 const std::type_identity_t<Tensor<T>>* bias,
                 std::array<std::size_t, 2> stride, Pad2 pad,
                 std::size_t groups = 1) {
  if (x.rank() != 4 || w.rank() != 4)
    throw DimensionError("conv2d expects x[N,H,W,C] and w[kH,kW,Cin/g,Cout], got " +
                         to_string(x.shape()) + " and " + to_string(w.shape()));
  const std::size_t N = x.dim(0), H = x.dim(1), W = x.dim(2), cin = x.dim(3);
  const std::size_t kh = w.dim(0), kw = w.dim(1), cout = w.dim(3);
  if (groups == 0 || cin % groups != 0 || cout % groups != 0 ||
      w.dim(2) != cin / groups)
    throw DimensionError("conv2d: channels " + std::to_string(cin) + "->" +
                         std::to_string(cout) + " incompatible with groups " +
                         std::to_string(groups) + " and kernel " + to_string(w.shape()));
  if (bias && bias->size() != cout)
    throw DimensionError("conv2d: bias size does not match output channels");
  const std::size_t Ho = detail::conv_extent(H, pad.top, pad.bottom, kh, stride[0], "H");
  const std::size_t Wo = detail::conv_extent(W, pad.left, pad.right, kw, stride[1], "W");
  const std::size_t cin_g = cin / groups, cout_g = cout / groups;
  const std::size_t rows = N * Ho * Wo;
  const std::size_t K = kh * kw * cin;

  // Input offset of tap (dh, dw) for output pixel r, or npos when padded.
  auto tap = [=](std::size_t r, std::size_t dh, std::size_t dw) -> std::size_t {
    const std::size_t n = r / (Ho * Wo), oh = (r / Wo) % Ho, ow = r % Wo;
    const long ih = long(oh * stride[0] + dh) - long(pad.top);
    const long iw = long(ow * stride[1] + dw) - long(pad.left);
    if (ih < 0 || ih >= long(H) || iw < 0 || iw >= long(W))
      return std::numeric_limits<std::size_t>::max();
    return ((n * H + std::size_t(ih)) * W + std::size_t(iw)) * cin;
  };
  constexpr std::size_t kChunk = 2048;
  auto im2col = [=](std::span<const T> src, std::size_t r0, std::size_t nr,
                    std::vector<T>& cols) {
    cols.assign(nr * K, T(0));
    for (std::size_t r = 0; r < nr; ++r)
      for (std::size_t dh = 0; dh < kh; ++dh)
        for (std::size_t dw = 0; dw < kw; ++dw) {
          const std::size_t off = tap(r0 + r, dh, dw);
          if (off == std::numeric_limits<std::size_t>::max()) continue;
          std::copy_n(src.data() + off, cin, cols.data() + r * K + (dh * kw + dw) * cin);
        }
  };

  std::vector<T> out(rows * cout, T(0));
  if (bias)
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(bias->data().begin(), bias->data().end(), out.begin() + r * cout);
  auto xs = x.data();
  auto ws = w.data();
  if (groups == 1) {
    std::vector<T> cols;
    for (std::size_t r0 = 0; r0 < rows; r0 += kChunk) {
      const std::size_t nr = std::min(kChunk, rows - r0);
      im2col(xs, r0, nr, cols);
      kernels::gemm(nr, cout, K, cols.data(), K, ws.data(), cout,
                    out.data() + r0 * cout, cout);
    }
  } else {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t dh = 0; dh < kh; ++dh)
        for (std::size_t dw = 0; dw < kw; ++dw) {
          const std::size_t off = tap(r, dh, dw);
          if (off == std::numeric_limits<std::size_t>::max()) continue;
          const T* wt = ws.data() + (dh * kw + dw) * cin_g * cout;
          T* o = out.data() + r * cout;
          for (std::size_t g = 0; g < groups; ++g)
            for (std::size_t ci = 0; ci < cin_g; ++ci) {
              const T xv = xs[off + g * cin_g + ci];
              const T* wr = wt + ci * cout + g * cout_g;
              for (std::size_t co = 0; co < cout_g; ++co) o[g * cout_g + co] += xv * wr[co];
            }
        }
  }
  Tensor<T> b = bias ? *bias : Tensor<T>();
  const bool has_bias = bias != nullptr;
  Tape<T>* tape = has_bias ? detail::common_tape(x, w, b) : detail::common_tape(x, w);
  return detail::finish(
      Tensor<T>({N, Ho, Wo, cout}, std::move(out)), tape, "conv2d",
      {x.node(), w.node(), b.node()},
      [=](const Tensor<T>& g, Tape<T>& tape) {
        auto gs = g.data();
        auto xs = x.data();
        auto ws = w.data();
        const bool want_x = x.tape() == &tape;
        const bool want_w = w.tape() == &tape;
        std::vector<T> gx(want_x ? x.size() : 0, T(0));
        std::vector<T> gw(want_w ? w.size() : 0, T(0));
        if (groups == 1) {
          std::vector<T> wt;
          if (want_x) wt = detail::transposed(K, cout, ws.data());
          std::vector<T> cols, colst, gcols;
          for (std::size_t r0 = 0; r0 < rows; r0 += kChunk) {
            const std::size_t nr = std::min(kChunk, rows - r0);
            const T* gchunk = gs.data() + r0 * cout;
            if (want_w) {
              im2col(xs, r0, nr, cols);
              colst = detail::transposed(nr, K, cols.data());
              kernels::gemm(K, cout, nr, colst.data(), nr, gchunk, cout, gw.data(), cout);
            }
            if (want_x) {
              gcols.assign(nr * K, T(0));
              kernels::gemm(nr, K, cout, gchunk, cout, wt.data(), K, gcols.data(), K);
              for (std::size_t r = 0; r < nr; ++r)
                for (std::size_t dh = 0; dh < kh; ++dh)
                  for (std::size_t dw = 0; dw < kw; ++dw) {
                    const std::size_t off = tap(r0 + r, dh, dw);
                    if (off == std::numeric_limits<std::size_t>::max()) continue;
                    const T* s = gcols.data() + r * K + (dh * kw + dw) * cin;
                    for (std::size_t c = 0; c < cin; ++c) gx[off + c] += s[c];
                  }
            }
          }
        } else {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t dh = 0; dh < kh; ++dh)
              for (std::size_t dw = 0; dw < kw; ++dw) {
                const std::size_t off = tap(r, dh, dw);
                if (off == std::numeric_limits<std::size_t>::max()) continue;
                const std::size_t woff = (dh * kw + dw) * cin_g * cout;
                const T* gr = gs.data() + r * cout;
                for (std::size_t gi = 0; gi < groups; ++gi)
                  for (std::size_t ci = 0; ci < cin_g; ++ci) {
                    const std::size_t xi = off + gi * cin_g + ci;
                    const std::size_t wi = woff + ci * cout + gi * cout_g;
                    for (std::size_t co = 0; co < cout_g; ++co) {
                      if (want_x) gx[xi] += gr[gi * cout_g + co] * ws[wi + co];
                      if (want_w) gw[wi + co] += gr[gi * cout_g + co] * xs[xi];
                    }
                  }
              }
        }
        if (want_x) tape.accumulate(x, Tensor<T>(x.shape(), std::move(gx)));
        if (want_w) tape.accumulate(w, Tensor<T>(w.shape(), std::move(gw)));
        if (has_bias && b.tape() == &tape) tape.accumulate(b, sum_to(g, b.shape()));
      });
}

/// Depthwise temporal convolution: x[T,C], w[K,C], bias[C]. Padding is given
/// per side so a causal filter is pad_left = K-1, pad_right = 0.
template <class T>
Tensor<T> dwconv1d(const Tensor<T>& x, const Tensor<T>& w,
                   const std::type_identity_t<Tensor<T>>* bias,
                   std::size_t pad_left, std::size_t pad_right) {
  if (x.rank() != 2 || w.rank() != 2 || w.dim(1) != x.dim(1))
    throw DimensionError("dwconv1d expects x[T,C] and w[K,C], got " +
                         to_string(x.shape()) + " and " + to_string(w.shape()));
  const std::size_t t = x.dim(0), c = x.dim(1), k = w.dim(0);
  Tensor<T> y = conv2d(reshape(x, {1, 1, t, c}), reshape(w, {1, k, 1, c}), bias,
                       {1, 1}, Pad2{0, 0, pad_left, pad_right}, c);
  return reshape(y, {y.dim(2), c});
}

/// Max pooling over H and W of x[N,H,W,C]; padded cells never win.
template <class T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride,
                    std::size_t pad) {
  if (x.rank() != 4) throw DimensionError("maxpool2d expects x[N,H,W,C]");
  const std::size_t N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const std::size_t Ho = detail::conv_extent(H, pad, pad, kernel, stride, "H");
  const std::size_t Wo = detail::conv_extent(W, pad, pad, kernel, stride, "W");
  auto xs = x.data();
  std::vector<T> out(N * Ho * Wo * C, -std::numeric_limits<T>::infinity());
  std::vector<std::size_t> arg(out.size(), 0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t oh = 0; oh < Ho; ++oh)
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        const std::size_t o = ((n * Ho + oh) * Wo + ow) * C;
        for (std::size_t dh = 0; dh < kernel; ++dh) {
          const long ih = long(oh * stride + dh) - long(pad);
          if (ih < 0 || ih >= long(H)) continue;
          for (std::size_t dw = 0; dw < kernel; ++dw) {
            const long iw = long(ow * stride + dw) - long(pad);
            if (iw < 0 || iw >= long(W)) continue;
            const std::size_t i = ((n * H + std::size_t(ih)) * W + std::size_t(iw)) * C;
            for (std::size_t c = 0; c < C; ++c)
              if (xs[i + c] > out[o + c]) {
                out[o + c] = xs[i + c];
                arg[o + c] = i + c;
              }
          }
        }
      }
  return detail::finish(Tensor<T>({N, Ho, Wo, C}, std::move(out)), x.tape(),
                        "maxpool2d", {x.node()},
                        [x, arg = std::move(arg)](const Tensor<T>& g, Tape<T>& tape) {
                          std::vector<T> gx(x.size(), T(0));
                          auto gs = g.data();
                          for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += gs[i];
                          tape.accumulate(x, Tensor<T>(x.shape(), std::move(gx)));
                        });
}

}  // namespace swinlip
