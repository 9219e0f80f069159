#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace swinlip::kernels {

namespace detail {

template <class T, std::size_t MR, std::size_t NR>
inline void gemm_micro(std::size_t kc, const T* a, std::size_t lda,
                       const T* packed_b, T* c, std::size_t ldc,
                       std::size_t nr) {
  T acc[MR][NR] = {};
  for (std::size_t p = 0; p < kc; ++p) {
    const T* b = packed_b + p * NR;
    for (std::size_t r = 0; r < MR; ++r) {
      const T av = a[r * lda + p];
      for (std::size_t j = 0; j < NR; ++j) acc[r][j] += av * b[j];
    }
  }
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t j = 0; j < nr; ++j) c[r * ldc + j] += acc[r][j];
}

}  // namespace detail

/// C[m,n] += A[m,k] * B[k,n], all row-major with leading dimensions.
/// Register-blocked with packed B panels; rows are processed in groups of 6.
template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c,
          std::size_t ldc) {
  if (m == 0 || n == 0 || k == 0) return;
  if (m <= 4) {
    for (std::size_t i = 0; i < m; ++i) {
      T* cr = c + i * ldc;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = a[i * lda + p];
        const T* br = b + p * ldb;
        for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
      }
    }
    return;
  }
  constexpr std::size_t NR = 128 / sizeof(T);
  constexpr std::size_t MR = 6;
  constexpr std::size_t KC = 256;
  const std::size_t panels = (n + NR - 1) / NR;
  std::vector<T> pack;
  for (std::size_t pc = 0; pc < k; pc += KC) {
    const std::size_t kc = std::min(KC, k - pc);
    pack.assign(panels * kc * NR, T(0));
    for (std::size_t jp = 0; jp < panels; ++jp) {
      const std::size_t j0 = jp * NR;
      const std::size_t nr = std::min(NR, n - j0);
      T* dst = pack.data() + jp * kc * NR;
      for (std::size_t p = 0; p < kc; ++p)
        std::copy_n(b + (pc + p) * ldb + j0, nr, dst + p * NR);
    }
    auto run = [&](auto micro, std::size_t i) {
      for (std::size_t jp = 0; jp < panels; ++jp) {
        const std::size_t j0 = jp * NR;
        micro(kc, a + i * lda + pc, lda, pack.data() + jp * kc * NR,
              c + i * ldc + j0, ldc, std::min(NR, n - j0));
      }
    };
    std::size_t i = 0;
    for (; i + MR <= m; i += MR) run(detail::gemm_micro<T, MR, NR>, i);
    switch (m - i) {
      case 0: break;
      case 1: run(detail::gemm_micro<T, 1, NR>, i); break;
      case 2: run(detail::gemm_micro<T, 2, NR>, i); break;
      case 3: run(detail::gemm_micro<T, 3, NR>, i); break;
      case 4: run(detail::gemm_micro<T, 4, NR>, i); break;
      default: run(detail::gemm_micro<T, 5, NR>, i); break;
    }
  }
}

// Row-major out[n,m] = in[m,n]^T.
template <class T>
void transpose(std::size_t m, std::size_t n, const T* in, T* out) {
  constexpr std::size_t B = 32;
  for (std::size_t i0 = 0; i0 < m; i0 += B)
    for (std::size_t j0 = 0; j0 < n; j0 += B)
      for (std::size_t i = i0; i < std::min(m, i0 + B); ++i)
        for (std::size_t j = j0; j < std::min(n, j0 + B); ++j)
          out[j * m + i] = in[i * n + j];
}

namespace reference {

// Triple loop; the oracle for gemm.
template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
          T* c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] += s;
    }
}

}  // namespace reference
}  // namespace swinlip::kernels
