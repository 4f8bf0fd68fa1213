#pragma once

namespace progseg {

// C[M,N] += A[M,K] * B[K,N], all row-major.
//
// Every C element accumulates its K terms in ascending k order, so the
// result is bit-identical regardless of blocking. This is the reduction
// order the whole engine is specified against.
void gemm_acc(int m, int n, int k, const float* a, const float* b, float* c);

// out[N,M] = in[M,N], row-major.
void transpose(int m, int n, const float* in, float* out);

}  // namespace progseg
