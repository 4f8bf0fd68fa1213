#pragma once

#include "tensor.hpp"

namespace progseg {

// Cross-correlation: x [b,ic,h,w], weight [oc,ic,kh,kw], bias [oc].
// Output spatial size floor((in + 2*pad - k)/stride) + 1 must be positive.
Tensor conv2d_op(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
                 int padding);

// Adjoint of conv2d_op with the same geometry: x [b,ic,h,w],
// weight [ic,oc,kh,kw], output spatial size (in-1)*stride - 2*pad + k.
Tensor conv_transpose2d_op(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
                           int padding);

// Per-channel batch normalization over (batch, height, width).
// Training mode requires batch >= 2, uses batch statistics and updates
// running_mean/running_var in place:  running = momentum*running + (1-momentum)*batch.
// Eval mode uses the running statistics and mutates nothing.
Tensor batchnorm_op(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    Tensor& running_mean, Tensor& running_var, float momentum, float eps,
                    bool training);

// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
// p == 0 is the identity and consumes no randomness. The sampled mask is
// part of the recorded graph, so gradients flow through it.
Tensor dropout_op(const Tensor& x, float p, Rng& rng);

int conv_out_size(int in, int k, int stride, int padding);
int conv_transpose_out_size(int in, int k, int stride, int padding);

}  // namespace progseg
