#pragma once

// Naive reference implementations. Plain loops over std::vector<double>; none
// of them call into the library's ops.

#include <cmath>
#include <array>
#include <cstddef>
#include <vector>

#include "swinlip.hpp"

namespace oracle {

using Vec = std::vector<double>;

template <class T>
Vec values(const swinlip::Tensor<T>& t) {
  return Vec(t.data().begin(), t.data().end());
}

// a[M,K] b[K,N]
inline Vec matmul(const Vec& a, const Vec& b, std::size_t M, std::size_t K, std::size_t N) {
  Vec c(M * N, 0.0);
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < K; ++k) s += a[i * K + k] * b[k * N + j];
      c[i * N + j] = s;
    }
  return c;
}

inline void softmax_rows(Vec& x, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double m = -1e300;
    for (std::size_t c = 0; c < cols; ++c) m = std::max(m, x[r * cols + c]);
    double z = 0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(x[r * cols + c] - m);
    for (std::size_t c = 0; c < cols; ++c) x[r * cols + c] = std::exp(x[r * cols + c] - m) / z;
  }
}

// x[T,H,W,Cin], w[kt,kh,kw,Cin,Cout]
inline Vec conv3d(const Vec& x, std::size_t T, std::size_t H, std::size_t W, std::size_t cin,
                  const Vec& w, std::size_t kt, std::size_t kh, std::size_t kw, std::size_t cout,
                  const Vec* bias, std::array<std::size_t, 3> stride,
                  std::array<std::size_t, 3> pad, std::size_t& To, std::size_t& Ho,
                  std::size_t& Wo) {
  To = (T + 2 * pad[0] - kt) / stride[0] + 1;
  Ho = (H + 2 * pad[1] - kh) / stride[1] + 1;
  Wo = (W + 2 * pad[2] - kw) / stride[2] + 1;
  Vec y(To * Ho * Wo * cout, 0.0);
  for (std::size_t t = 0; t < To; ++t)
    for (std::size_t h = 0; h < Ho; ++h)
      for (std::size_t v = 0; v < Wo; ++v)
        for (std::size_t o = 0; o < cout; ++o) {
          double s = bias ? (*bias)[o] : 0.0;
          for (std::size_t a = 0; a < kt; ++a)
            for (std::size_t b = 0; b < kh; ++b)
              for (std::size_t c = 0; c < kw; ++c) {
                const long it = long(t * stride[0] + a) - long(pad[0]);
                const long ih = long(h * stride[1] + b) - long(pad[1]);
                const long iw = long(v * stride[2] + c) - long(pad[2]);
                if (it < 0 || ih < 0 || iw < 0 || it >= long(T) || ih >= long(H) ||
                    iw >= long(W))
                  continue;
                for (std::size_t i = 0; i < cin; ++i)
                  s += x[((std::size_t(it) * H + std::size_t(ih)) * W + std::size_t(iw)) * cin +
                         i] *
                       w[(((a * kh + b) * kw + c) * cin + i) * cout + o];
              }
          y[((t * Ho + h) * Wo + v) * cout + o] = s;
        }
  return y;
}

// x[N,H,W,Cin], w[kh,kw,Cin/g,Cout]
inline Vec conv2d(const Vec& x, std::size_t N, std::size_t H, std::size_t W, std::size_t cin,
                  const Vec& w, std::size_t kh, std::size_t kw, std::size_t cout,
                  const Vec* bias, std::size_t sh, std::size_t sw, std::size_t pt,
                  std::size_t pb, std::size_t pl, std::size_t pr, std::size_t groups,
                  std::size_t& Ho, std::size_t& Wo) {
  Ho = (H + pt + pb - kh) / sh + 1;
  Wo = (W + pl + pr - kw) / sw + 1;
  const std::size_t gi = cin / groups, go = cout / groups;
  Vec y(N * Ho * Wo * cout, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t h = 0; h < Ho; ++h)
      for (std::size_t v = 0; v < Wo; ++v)
        for (std::size_t o = 0; o < cout; ++o) {
          const std::size_t g = o / go;
          double s = bias ? (*bias)[o] : 0.0;
          for (std::size_t b = 0; b < kh; ++b)
            for (std::size_t c = 0; c < kw; ++c) {
              const long ih = long(h * sh + b) - long(pt);
              const long iw = long(v * sw + c) - long(pl);
              if (ih < 0 || iw < 0 || ih >= long(H) || iw >= long(W)) continue;
              for (std::size_t i = 0; i < gi; ++i)
                s += x[((n * H + std::size_t(ih)) * W + std::size_t(iw)) * cin + g * gi + i] *
                     w[((b * kw + c) * gi + i) * cout + o];
            }
          y[((n * Ho + h) * Wo + v) * cout + o] = s;
        }
  return y;
}

inline Vec layer_norm(const Vec& x, std::size_t c, const Vec& g, const Vec& b,
                      double eps = 1e-5) {
  Vec y(x.size());
  for (std::size_t r = 0; r < x.size() / c; ++r) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < c; ++i) m += x[r * c + i];
    m /= double(c);
    for (std::size_t i = 0; i < c; ++i) v += (x[r * c + i] - m) * (x[r * c + i] - m);
    v /= double(c);
    for (std::size_t i = 0; i < c; ++i)
      y[r * c + i] = (x[r * c + i] - m) / std::sqrt(v + eps) * g[i] + b[i];
  }
  return y;
}

// y = gamma (x - mean) / sqrt(var + eps) + beta per channel.
inline Vec batch_norm(const Vec& x, std::size_t c, const Vec& gamma, const Vec& beta,
                      const Vec& mean, const Vec& var, double eps = 1e-5) {
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t k = i % c;
    y[i] = gamma[k] * (x[i] - mean[k]) / std::sqrt(var[k] + eps) + beta[k];
  }
  return y;
}

// Batch statistics (biased variance) per channel.
inline void channel_stats(const Vec& x, std::size_t c, Vec& mean, Vec& var) {
  const double n = double(x.size() / c);
  mean.assign(c, 0.0);
  var.assign(c, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) mean[i % c] += x[i] / n;
  for (std::size_t i = 0; i < x.size(); ++i)
    var[i % c] += (x[i] - mean[i % c]) * (x[i] - mean[i % c]) / n;
}

inline Vec linear(const Vec& x, std::size_t in, const Vec& w, std::size_t out, const Vec* b) {
  Vec y = matmul(x, w, x.size() / in, in, out);
  if (b)
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += (*b)[i % out];
  return y;
}

inline double gelu(double v) { return 0.5 * v * (1 + std::erf(v / std::sqrt(2.0))); }
inline double sigmoid(double v) { return 1 / (1 + std::exp(-v)); }

// Dense multi-head self-attention over n tokens with an additive per-head
// bias: bias(h, a, b). x[n, C]; qkv weight [C, 3C]; proj [C, C].
template <class Bias>
Vec dense_attention(const Vec& x, std::size_t n, std::size_t C, std::size_t heads,
                    const Vec& wqkv, const Vec& bqkv, const Vec& wp, const Vec& bp, Bias bias) {
  const Vec qkv = linear(x, C, wqkv, 3 * C, &bqkv);
  const std::size_t d = C / heads;
  Vec out(n * C, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    Vec s(n * n);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) {
        double dot = 0;
        for (std::size_t k = 0; k < d; ++k)
          dot += qkv[a * 3 * C + h * d + k] * qkv[b * 3 * C + C + h * d + k];
        s[a * n + b] = dot / std::sqrt(double(d)) + bias(h, a, b);
      }
    softmax_rows(s, n, n);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t k = 0; k < d; ++k) {
        double v = 0;
        for (std::size_t b = 0; b < n; ++b) v += s[a * n + b] * qkv[b * 3 * C + 2 * C + h * d + k];
        out[a * C + h * d + k] = v;
      }
  }
  return linear(out, C, wp, C, &bp);
}

// Shifted-window mask by region labels: after rolling the grid by -s, a token
// at rolled coordinate p came from p + s; pairs whose origins straddle the
// wrap on either axis are blocked.
inline Vec region_mask(std::size_t h, std::size_t w, std::size_t M, std::size_t s) {
  const std::size_t n = M * M, nw = (h / M) * (w / M);
  Vec mask(nw * n * n, 0.0);
  for (std::size_t wi = 0; wi < h / M; ++wi)
    for (std::size_t wj = 0; wj < w / M; ++wj)
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) {
          const std::size_t ya = wi * M + a / M, xa = wj * M + a % M;
          const std::size_t yb = wi * M + b / M, xb = wj * M + b % M;
          const bool wrap_ya = ya + s >= h, wrap_xa = xa + s >= w;
          const bool wrap_yb = yb + s >= h, wrap_xb = xb + s >= w;
          const bool same = wrap_ya == wrap_yb && wrap_xa == wrap_xb;
          mask[((wi * (w / M) + wj) * n + a) * n + b] = same ? 0.0 : -1e4;
        }
  return mask;
}

// Sinusoid of a relative offset, as used by the temporal attention.
inline double sinusoid(double offset, std::size_t i, std::size_t dim) {
  const double freq = std::pow(10000.0, -double(i - i % 2) / double(dim));
  return i % 2 == 0 ? std::sin(offset * freq) : std::cos(offset * freq);
}

struct RelAttentionWeights {
  Vec wq, bq, wk, bk, wv, bv, wpos, u, v, wo, bo;
};

// score(i,j) = ((q_i + u).k_j + (q_i + v).(W_pos r(i-j))) / sqrt(d), on an
// already normalized input x[T, D].
inline Vec rel_attention(const Vec& x, std::size_t T, std::size_t D, std::size_t heads,
                         const RelAttentionWeights& p) {
  const std::size_t d = D / heads;
  const Vec q = linear(x, D, p.wq, D, &p.bq);
  const Vec k = linear(x, D, p.wk, D, &p.bk);
  const Vec v = linear(x, D, p.wv, D, &p.bv);
  Vec ctx(T * D, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    Vec s(T * T);
    for (std::size_t i = 0; i < T; ++i)
      for (std::size_t j = 0; j < T; ++j) {
        Vec r(D);
        for (std::size_t e = 0; e < D; ++e) r[e] = sinusoid(double(i) - double(j), e, D);
        double content = 0, position = 0;
        for (std::size_t e = 0; e < d; ++e) {
          const std::size_t col = h * d + e;
          double pr = 0;
          for (std::size_t f = 0; f < D; ++f) pr += r[f] * p.wpos[f * D + col];
          content += (q[i * D + col] + p.u[col]) * k[j * D + col];
          position += (q[i * D + col] + p.v[col]) * pr;
        }
        s[i * T + j] = (content + position) / std::sqrt(double(d));
      }
    softmax_rows(s, T, T);
    for (std::size_t i = 0; i < T; ++i)
      for (std::size_t e = 0; e < d; ++e) {
        double acc = 0;
        for (std::size_t j = 0; j < T; ++j) acc += s[i * T + j] * v[j * D + h * d + e];
        ctx[i * D + h * d + e] = acc;
      }
  }
  return linear(ctx, D, p.wo, D, &p.bo);
}

struct ConvModuleWeights {
  Vec ln_g, ln_b, w1, b1, dw, dwb, w2, b2;
};

// LN, pointwise to 2D, GLU, depthwise conv over time, swish, pointwise.
inline Vec conv_module(const Vec& y, std::size_t T, std::size_t D, std::size_t K, bool causal,
                       const ConvModuleWeights& p) {
  const Vec x = layer_norm(y, D, p.ln_g, p.ln_b);
  const Vec h2 = linear(x, D, p.w1, 2 * D, &p.b1);
  Vec g(T * D);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < D; ++c)
      g[t * D + c] = h2[t * 2 * D + c] * sigmoid(h2[t * 2 * D + D + c]);
  const long left = causal ? long(K) - 1 : long(K - 1) / 2;
  Vec z(T * D);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < D; ++c) {
      double s = p.dwb[c];
      for (std::size_t k = 0; k < K; ++k) {
        const long src = long(t) + long(k) - left;
        if (src >= 0 && src < long(T)) s += p.dw[k * D + c] * g[std::size_t(src) * D + c];
      }
      z[t * D + c] = s * sigmoid(s);
    }
  return linear(z, D, p.w2, D, &p.b2);
}

}  // namespace oracle
