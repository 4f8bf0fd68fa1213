#include "nn_ops.hpp"

#include <cmath>
#include <cstring>
#include <vector>

#include "gemm.hpp"

namespace progseg {

int conv_out_size(int in, int k, int stride, int padding) {
  return (in + 2 * padding - k) / stride + 1;
}

int conv_transpose_out_size(int in, int k, int stride, int padding) {
  return (in - 1) * stride - 2 * padding + k;
}

namespace {

// im2col for one image: src [c,h,w] -> col [c*kh*kw, oh*ow].
void im2col(const float* src, int c, int h, int w, int kh, int kw, int stride, int pad, int oh,
            int ow, float* col) {
  const size_t n = static_cast<size_t>(oh) * ow;
  size_t krow = 0;
  for (int ch = 0; ch < c; ++ch) {
    const float* plane = src + static_cast<size_t>(ch) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj, ++krow) {
        float* dst = col + krow * n;
        for (int oi = 0; oi < oh; ++oi) {
          const int si = oi * stride - pad + ki;
          float* drow = dst + static_cast<size_t>(oi) * ow;
          if (si < 0 || si >= h) {
            std::memset(drow, 0, sizeof(float) * ow);
            continue;
          }
          const float* srow = plane + static_cast<size_t>(si) * w;
          for (int oj = 0; oj < ow; ++oj) {
            const int sj = oj * stride - pad + kj;
            drow[oj] = (sj >= 0 && sj < w) ? srow[sj] : 0.0f;
          }
        }
      }
    }
  }
}

// Patch-major variant: colt [oh*ow, c*kh*kw]. Used for weight gradients.
void im2col_t(const float* src, int c, int h, int w, int kh, int kw, int stride, int pad, int oh,
              int ow, float* colt) {
  const int kk = c * kh * kw;
  for (int oi = 0; oi < oh; ++oi) {
    for (int oj = 0; oj < ow; ++oj) {
      float* row = colt + (static_cast<size_t>(oi) * ow + oj) * kk;
      size_t q = 0;
      for (int ch = 0; ch < c; ++ch) {
        const float* plane = src + static_cast<size_t>(ch) * h * w;
        for (int ki = 0; ki < kh; ++ki) {
          const int si = oi * stride - pad + ki;
          for (int kj = 0; kj < kw; ++kj, ++q) {
            const int sj = oj * stride - pad + kj;
            row[q] = (si >= 0 && si < h && sj >= 0 && sj < w)
                         ? plane[static_cast<size_t>(si) * w + sj]
                         : 0.0f;
          }
        }
      }
    }
  }
}

// Scatter-add inverse of im2col: col [c*kh*kw, oh*ow] accumulated into
// dst [c,h,w]. Loop order is fixed, so accumulation is deterministic.
void col2im_acc(const float* col, int c, int h, int w, int kh, int kw, int stride, int pad, int oh,
                int ow, float* dst) {
  const size_t n = static_cast<size_t>(oh) * ow;
  size_t krow = 0;
  for (int ch = 0; ch < c; ++ch) {
    float* plane = dst + static_cast<size_t>(ch) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj, ++krow) {
        const float* srow_base = col + krow * n;
        for (int oi = 0; oi < oh; ++oi) {
          const int si = oi * stride - pad + ki;
          if (si < 0 || si >= h) continue;
          const float* srow = srow_base + static_cast<size_t>(oi) * ow;
          float* drow = plane + static_cast<size_t>(si) * w;
          for (int oj = 0; oj < ow; ++oj) {
            const int sj = oj * stride - pad + kj;
            if (sj >= 0 && sj < w) drow[sj] += srow[oj];
          }
        }
      }
    }
  }
}

bool recording_any(const Tensor& a, const Tensor& b, const Tensor& c) {
  return active_graph() && (a.requires_grad() || b.requires_grad() || c.requires_grad());
}

}  // namespace

Tensor conv2d_op(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
                 int padding) {
  if (x.ndim() != 4 || weight.ndim() != 4 || bias.ndim() != 1)
    throw ShapeError("conv2d: expected x[b,c,h,w], weight[oc,ic,kh,kw], bias[oc]");
  const int b = x.dim(0), ic = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oc = weight.dim(0), wic = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  if (wic != ic)
    throw ShapeError("conv2d: input channels " + std::to_string(ic) + " do not match weight " +
                     shape_str(weight.shape()));
  if (bias.dim(0) != oc) throw ShapeError("conv2d: bias size does not match output channels");
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: invalid stride/padding");
  const int oh = conv_out_size(h, kh, stride, padding);
  const int ow = conv_out_size(w, kw, stride, padding);
  if (oh <= 0 || ow <= 0)
    throw ShapeError("conv2d: non-positive output size for input " + shape_str(x.shape()));

  const int kk = ic * kh * kw;
  const size_t n = static_cast<size_t>(oh) * ow;
  Tensor out(Shape{b, oc, oh, ow});
  std::vector<float> col(static_cast<size_t>(kk) * n);
  for (int img = 0; img < b; ++img) {
    im2col(x.data() + static_cast<size_t>(img) * ic * h * w, ic, h, w, kh, kw, stride, padding, oh,
           ow, col.data());
    float* o = out.data() + static_cast<size_t>(img) * oc * n;
    gemm_acc(oc, static_cast<int>(n), kk, weight.data(), col.data(), o);
    for (int ch = 0; ch < oc; ++ch) {
      const float bv = bias.data()[ch];
      float* orow = o + static_cast<size_t>(ch) * n;
      for (size_t i = 0; i < n; ++i) orow[i] += bv;
    }
  }

  if (recording_any(x, weight, bias)) {
    auto xi = x.impl();
    auto wi = weight.impl();
    auto bi = bias.impl();
    auto oi = out.impl();
    Graph* g = active_graph();
    out.set_requires_grad(true);
    g->record(Node{
        "conv2d",
        {xi, wi, bi},
        oi,
        [xi, wi, bi, oi, b, ic, h, w, oc, kh, kw, stride, padding, oh, ow, kk, n]() {
          const float* gout = oi->grad.data();
          if (bi->requires_grad) {
            bi->ensure_grad();
            float* db = bi->grad.data();
            for (int img = 0; img < b; ++img) {
              const float* go = gout + static_cast<size_t>(img) * oc * n;
              for (int ch = 0; ch < oc; ++ch) {
                float s = 0.0f;
                const float* row = go + static_cast<size_t>(ch) * n;
                for (size_t i = 0; i < n; ++i) s += row[i];
                db[ch] += s;
              }
            }
          }
          if (wi->requires_grad) {
            // dW[oc,q] += sum_n dOut[oc,n] * patch[n,q], ascending n per image
            wi->ensure_grad();
            float* dw = wi->grad.data();
            std::vector<float> colt(n * static_cast<size_t>(kk));
            for (int img = 0; img < b; ++img) {
              im2col_t(xi->data.data() + static_cast<size_t>(img) * ic * h * w, ic, h, w, kh, kw,
                       stride, padding, oh, ow, colt.data());
              const float* go = gout + static_cast<size_t>(img) * oc * n;
              for (size_t p = 0; p < n; ++p) {
                const float* patch = colt.data() + p * kk;
                for (int ch = 0; ch < oc; ++ch) {
                  const float gv = go[static_cast<size_t>(ch) * n + p];
                  float* dwrow = dw + static_cast<size_t>(ch) * kk;
                  for (int q = 0; q < kk; ++q) dwrow[q] += gv * patch[q];
                }
              }
            }
          }
          if (xi->requires_grad) {
            xi->ensure_grad();
            std::vector<float> wt(static_cast<size_t>(kk) * oc);
            transpose(oc, kk, wi->data.data(), wt.data());
            std::vector<float> dcol(static_cast<size_t>(kk) * n);
            for (int img = 0; img < b; ++img) {
              std::fill(dcol.begin(), dcol.end(), 0.0f);
              gemm_acc(kk, static_cast<int>(n), oc, wt.data(),
                       gout + static_cast<size_t>(img) * oc * n, dcol.data());
              col2im_acc(dcol.data(), ic, h, w, kh, kw, stride, padding, oh, ow,
                         xi->grad.data() + static_cast<size_t>(img) * ic * h * w);
            }
          }
        }});
  }
  return out;
}

Tensor conv_transpose2d_op(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
                           int padding) {
  if (x.ndim() != 4 || weight.ndim() != 4 || bias.ndim() != 1)
    throw ShapeError("conv_transpose2d: expected x[b,c,h,w], weight[ic,oc,kh,kw], bias[oc]");
  const int b = x.dim(0), ic = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int wic = weight.dim(0), oc = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  if (wic != ic)
    throw ShapeError("conv_transpose2d: input channels " + std::to_string(ic) +
                     " do not match weight " + shape_str(weight.shape()));
  if (bias.dim(0) != oc) throw ShapeError("conv_transpose2d: bias size mismatch");
  if (stride < 1 || padding < 0) throw ShapeError("conv_transpose2d: invalid stride/padding");
  const int oh = conv_transpose_out_size(h, kh, stride, padding);
  const int ow = conv_transpose_out_size(w, kw, stride, padding);
  if (oh <= 0 || ow <= 0)
    throw ShapeError("conv_transpose2d: non-positive output size for input " + shape_str(x.shape()));

  // Forward is the adjoint of a conv2d that maps [oc,oh,ow] -> [ic,h,w]:
  // col = W^T * x, then scatter with that conv's im2col geometry.
  const int kk = oc * kh * kw;
  const size_t n = static_cast<size_t>(h) * w;
  Tensor out(Shape{b, oc, oh, ow});
  std::vector<float> wt(static_cast<size_t>(kk) * ic);
  transpose(ic, kk, weight.data(), wt.data());
  std::vector<float> col(static_cast<size_t>(kk) * n);
  for (int img = 0; img < b; ++img) {
    std::fill(col.begin(), col.end(), 0.0f);
    gemm_acc(kk, static_cast<int>(n), ic, wt.data(), x.data() + static_cast<size_t>(img) * ic * n,
             col.data());
    col2im_acc(col.data(), oc, oh, ow, kh, kw, stride, padding, h, w,
               out.data() + static_cast<size_t>(img) * oc * oh * ow);
  }
  for (int img = 0; img < b; ++img) {
    float* o = out.data() + static_cast<size_t>(img) * oc * oh * ow;
    for (int ch = 0; ch < oc; ++ch) {
      const float bv = bias.data()[ch];
      float* orow = o + static_cast<size_t>(ch) * oh * ow;
      for (size_t i = 0; i < static_cast<size_t>(oh) * ow; ++i) orow[i] += bv;
    }
  }

  if (recording_any(x, weight, bias)) {
    auto xi = x.impl();
    auto wi = weight.impl();
    auto bi = bias.impl();
    auto oi = out.impl();
    Graph* g = active_graph();
    out.set_requires_grad(true);
    g->record(Node{
        "conv_transpose2d",
        {xi, wi, bi},
        oi,
        [xi, wi, bi, oi, b, ic, h, w, oc, kh, kw, stride, padding, oh, ow, kk, n]() {
          const float* gout = oi->grad.data();
          const size_t on = static_cast<size_t>(oh) * ow;
          if (bi->requires_grad) {
            bi->ensure_grad();
            float* db = bi->grad.data();
            for (int img = 0; img < b; ++img) {
              const float* go = gout + static_cast<size_t>(img) * oc * on;
              for (int ch = 0; ch < oc; ++ch) {
                float s = 0.0f;
                const float* row = go + static_cast<size_t>(ch) * on;
                for (size_t i = 0; i < on; ++i) s += row[i];
                db[ch] += s;
              }
            }
          }
          if (xi->requires_grad || wi->requires_grad) {
            std::vector<float> col(static_cast<size_t>(kk) * n);
            std::vector<float> colt;
            if (wi->requires_grad) colt.resize(n * static_cast<size_t>(kk));
            if (xi->requires_grad) xi->ensure_grad();
            if (wi->requires_grad) wi->ensure_grad();
            for (int img = 0; img < b; ++img) {
              const float* go = gout + static_cast<size_t>(img) * oc * on;
              if (xi->requires_grad) {
                // dX = conv(gout) with weight viewed as [ic, oc*kh*kw]
                im2col(go, oc, oh, ow, kh, kw, stride, padding, h, w, col.data());
                gemm_acc(ic, static_cast<int>(n), kk, wi->data.data(), col.data(),
                         xi->grad.data() + static_cast<size_t>(img) * ic * n);
              }
              if (wi->requires_grad) {
                im2col_t(go, oc, oh, ow, kh, kw, stride, padding, h, w, colt.data());
                const float* xv = xi->data.data() + static_cast<size_t>(img) * ic * n;
                float* dw = wi->grad.data();
                for (size_t p = 0; p < n; ++p) {
                  const float* patch = colt.data() + p * kk;
                  for (int ch = 0; ch < ic; ++ch) {
                    const float xvp = xv[static_cast<size_t>(ch) * n + p];
                    float* dwrow = dw + static_cast<size_t>(ch) * kk;
                    for (int q = 0; q < kk; ++q) dwrow[q] += xvp * patch[q];
                  }
                }
              }
            }
          }
        }});
  }
  return out;
}

Tensor batchnorm_op(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    Tensor& running_mean, Tensor& running_var, float momentum, float eps,
                    bool training) {
  if (x.ndim() != 4) throw ShapeError("batchnorm: expected rank-4 input");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (gamma.ndim() != 1 || gamma.dim(0) != c || beta.ndim() != 1 || beta.dim(0) != c)
    throw ShapeError("batchnorm: gamma/beta must be [channels]");
  if (training && b < 2)
    throw ContractError("batchnorm: training mode requires batch >= 2, got " + std::to_string(b));

  const size_t plane = static_cast<size_t>(h) * w;
  const size_t cstride = static_cast<size_t>(c) * plane;
  const float nf = static_cast<float>(b) * plane;

  std::vector<float> mean(c), inv_std(c);
  if (training) {
    for (int ch = 0; ch < c; ++ch) {
      float sum = 0.0f;
      for (int img = 0; img < b; ++img) {
        const float* p = x.data() + img * cstride + ch * plane;
        for (size_t i = 0; i < plane; ++i) sum += p[i];
      }
      const float mu = sum / nf;
      float var = 0.0f;
      for (int img = 0; img < b; ++img) {
        const float* p = x.data() + img * cstride + ch * plane;
        for (size_t i = 0; i < plane; ++i) {
          const float d = p[i] - mu;
          var += d * d;
        }
      }
      var /= nf;
      mean[ch] = mu;
      inv_std[ch] = 1.0f / std::sqrt(var + eps);
      running_mean.data()[ch] = momentum * running_mean.data()[ch] + (1.0f - momentum) * mu;
      running_var.data()[ch] = momentum * running_var.data()[ch] + (1.0f - momentum) * var;
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean.data()[ch];
      inv_std[ch] = 1.0f / std::sqrt(running_var.data()[ch] + eps);
    }
  }

  Tensor out(x.shape());
  auto xhat = std::make_shared<std::vector<float>>(x.size());
  for (int img = 0; img < b; ++img) {
    for (int ch = 0; ch < c; ++ch) {
      const float* p = x.data() + img * cstride + ch * plane;
      float* o = out.data() + img * cstride + ch * plane;
      float* xh = xhat->data() + img * cstride + ch * plane;
      const float mu = mean[ch], is = inv_std[ch];
      const float gm = gamma.data()[ch], bt = beta.data()[ch];
      for (size_t i = 0; i < plane; ++i) {
        const float v = (p[i] - mu) * is;
        xh[i] = v;
        o[i] = gm * v + bt;
      }
    }
  }

  if (active_graph() && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
    auto xi = x.impl();
    auto gi = gamma.impl();
    auto bi = beta.impl();
    auto oi = out.impl();
    Graph* g = active_graph();
    out.set_requires_grad(true);
    g->record(Node{
        "batchnorm",
        {xi, gi, bi},
        oi,
        [xi, gi, bi, oi, xhat, inv_std, b, c, plane, cstride, nf, training]() {
          const float* gout = oi->grad.data();
          for (int ch = 0; ch < c; ++ch) {
            // per-channel sums in (image, pixel) ascending order
            float s1 = 0.0f, s2 = 0.0f;
            for (int img = 0; img < b; ++img) {
              const float* go = gout + img * cstride + ch * plane;
              const float* xh = xhat->data() + img * cstride + ch * plane;
              for (size_t i = 0; i < plane; ++i) {
                s1 += go[i];
                s2 += go[i] * xh[i];
              }
            }
            if (gi->requires_grad) {
              gi->ensure_grad();
              gi->grad[ch] += s2;
            }
            if (bi->requires_grad) {
              bi->ensure_grad();
              bi->grad[ch] += s1;
            }
            if (xi->requires_grad) {
              xi->ensure_grad();
              const float gm = gi->data[ch], is = inv_std[ch];
              const float m1 = s1 / nf, m2 = s2 / nf;
              for (int img = 0; img < b; ++img) {
                const float* go = gout + img * cstride + ch * plane;
                const float* xh = xhat->data() + img * cstride + ch * plane;
                float* dx = xi->grad.data() + img * cstride + ch * plane;
                if (training) {
                  for (size_t i = 0; i < plane; ++i)
                    dx[i] += gm * is * (go[i] - m1 - xh[i] * m2);
                } else {
                  for (size_t i = 0; i < plane; ++i) dx[i] += gm * is * go[i];
                }
              }
            }
          }
        }});
  }
  return out;
}

Tensor dropout_op(const Tensor& x, float p, Rng& rng) {
  if (p < 0.0f || p >= 1.0f)
    throw ContractError("dropout: p must be in [0,1), got " + std::to_string(p));
  if (p == 0.0f) {
    // identity, and no randomness consumed
    return scale(x, 1.0f);
  }
  const float keep_scale = 1.0f / (1.0f - p);
  auto mask = std::make_shared<std::vector<float>>(x.size());
  Tensor out(x.shape());
  const float* px = x.data();
  float* po = out.data();
  for (size_t i = 0; i < x.size(); ++i) {
    const float m = rng.uniform() < p ? 0.0f : keep_scale;
    (*mask)[i] = m;
    po[i] = px[i] * m;
  }
  if (active_graph() && x.requires_grad()) {
    auto xi = x.impl();
    auto oi = out.impl();
    Graph* g = active_graph();
    out.set_requires_grad(true);
    g->record(Node{"dropout", {xi}, oi, [xi, oi, mask]() {
                     if (!xi->requires_grad) return;
                     xi->ensure_grad();
                     const float* gv = oi->grad.data();
                     float* dx = xi->grad.data();
                     for (size_t i = 0; i < oi->size(); ++i) dx[i] += gv[i] * (*mask)[i];
                   }});
  }
  return out;
}

}  // namespace progseg
