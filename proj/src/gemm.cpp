#include "gemm.hpp"

#include <cstddef>

namespace progseg {

namespace {

// Column block sized so a block of B stays resident in L2 while all rows
// of A sweep over it.
constexpr int kColBlock = 960;

inline void kernel_rows4(int n0, int n1, int n, int k, const float* a0,
                         const float* a1, const float* a2, const float* a3,
                         const float* b, float* c0, float* c1, float* c2,
                         float* c3) {
  for (int kk = 0; kk < k; ++kk) {
    const float w0 = a0[kk];
    const float w1 = a1[kk];
    const float w2 = a2[kk];
    const float w3 = a3[kk];
    const float* br = b + static_cast<size_t>(kk) * n;
    for (int j = n0; j < n1; ++j) {
      const float x = br[j];
      c0[j] += w0 * x;
      c1[j] += w1 * x;
      c2[j] += w2 * x;
      c3[j] += w3 * x;
    }
  }
}

inline void kernel_rows1(int n0, int n1, int n, int k, const float* a,
                         const float* b, float* c) {
  for (int kk = 0; kk < k; ++kk) {
    const float w = a[kk];
    const float* br = b + static_cast<size_t>(kk) * n;
    for (int j = n0; j < n1; ++j) c[j] += w * br[j];
  }
}

}  // namespace

void gemm_acc(int m, int n, int k, const float* a, const float* b, float* c) {
  for (int n0 = 0; n0 < n; n0 += kColBlock) {
    const int n1 = n0 + kColBlock < n ? n0 + kColBlock : n;
    int i = 0;
    for (; i + 4 <= m; i += 4) {
      const float* a0 = a + static_cast<size_t>(i) * k;
      kernel_rows4(n0, n1, n, k, a0, a0 + k, a0 + 2 * k, a0 + 3 * k, b,
                   c + static_cast<size_t>(i) * n,
                   c + static_cast<size_t>(i + 1) * n,
                   c + static_cast<size_t>(i + 2) * n,
                   c + static_cast<size_t>(i + 3) * n);
    }
    for (; i < m; ++i) {
      kernel_rows1(n0, n1, n, k, a + static_cast<size_t>(i) * k, b,
                   c + static_cast<size_t>(i) * n);
    }
  }
}

void transpose(int m, int n, const float* in, float* out) {
  constexpr int kTile = 32;
  for (int i0 = 0; i0 < m; i0 += kTile) {
    const int i1 = i0 + kTile < m ? i0 + kTile : m;
    for (int j0 = 0; j0 < n; j0 += kTile) {
      const int j1 = j0 + kTile < n ? j0 + kTile : n;
      for (int i = i0; i < i1; ++i)
        for (int j = j0; j < j1; ++j)
          out[static_cast<size_t>(j) * m + i] = in[static_cast<size_t>(i) * n + j];
    }
  }
}

}  // namespace progseg
