#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "gemm.hpp"

namespace progseg {

size_t shape_size(const Shape& s) {
  size_t n = 1;
  for (int d : s) n *= static_cast<size_t>(d);
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_dims_positive(const Shape& s) {
  for (int d : s) {
    if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + shape_str(s));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) {
  check_dims_positive(shape);
  impl_ = std::make_shared<TensorImpl>();
  impl_->data.assign(shape_size(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> values) {
  check_dims_positive(shape);
  if (shape_size(shape) != values.size())
    throw ShapeError("data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::scalar(float v) { return Tensor(Shape{}, std::vector<float>{v}); }

Tensor Tensor::randn(const Shape& s, Rng& rng, float mean, float stddev) {
  Tensor t(s);
  for (auto& v : t.impl_->data) v = rng.normal(mean, stddev);
  return t;
}

Tensor Tensor::rand_uniform(const Shape& s, Rng& rng, float lo, float hi) {
  Tensor t(s);
  for (auto& v : t.impl_->data) v = rng.uniform(lo, hi);
  return t;
}

float Tensor::item() const {
  if (size() != 1) throw ContractError("item() requires a size-1 tensor, got " + shape_str(shape()));
  return impl_->data[0];
}

float* Tensor::grad() {
  impl_->ensure_grad();
  return impl_->grad.data();
}

const float* Tensor::grad() const {
  return impl_->grad.empty() ? nullptr : impl_->grad.data();
}

Tensor Tensor::grad_as_tensor() const {
  Tensor g(impl_->shape);
  if (!impl_->grad.empty()) g.impl_->data = impl_->grad;
  return g;
}

Tensor Tensor::detach() const {
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  return t;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

// ---- graph -----------------------------------------------------------------

namespace {
thread_local Graph* t_active_graph = nullptr;
}

GraphScope::GraphScope(Graph& g) {
  prev_ = t_active_graph;
  t_active_graph = &g;
}

GraphScope::~GraphScope() { t_active_graph = prev_; }

Graph* active_graph() { return t_active_graph; }

void Graph::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] = 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // loss never reached this node
    it->backward();
  }
}

void backward(const Tensor& loss) {
  Graph* g = active_graph();
  if (!g) throw ContractError("backward: no active graph");
  g->backward(loss);
}

namespace {

bool recording(std::initializer_list<const Tensor*> ins) {
  if (!t_active_graph) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

void record(const char* op, std::vector<std::shared_ptr<TensorImpl>> inputs,
            Tensor& out, std::function<void()> bw) {
  out.set_requires_grad(true);
  t_active_graph->record(Node{op, std::move(inputs), out.impl(), std::move(bw)});
}

// Trailing-dimension broadcast of b onto a. Returns per-a-dim strides into
// b's storage (0 on broadcast axes).
std::vector<size_t> broadcast_strides(const Shape& a, const Shape& b, const char* op) {
  if (b.size() > a.size())
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
  const int off = static_cast<int>(a.size() - b.size());
  std::vector<size_t> bstride(a.size(), 0);
  size_t stride = 1;
  for (int i = static_cast<int>(b.size()) - 1; i >= 0; --i) {
    const int ad = a[static_cast<size_t>(i + off)];
    const int bd = b[static_cast<size_t>(i)];
    if (bd == ad) {
      bstride[static_cast<size_t>(i + off)] = stride;
    } else if (bd == 1) {
      bstride[static_cast<size_t>(i + off)] = 0;
    } else {
      throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
    stride *= static_cast<size_t>(bd);
  }
  return bstride;
}

// Visits a's elements in row-major order, handing (a_index, b_index) to fn.
template <typename Fn>
void for_each_broadcast(const Shape& a, const std::vector<size_t>& bstride, Fn&& fn) {
  const size_t n = shape_size(a);
  const size_t nd = a.size();
  if (nd == 0) {
    fn(0, 0);
    return;
  }
  std::vector<int> idx(nd, 0);
  size_t bi = 0;
  for (size_t ai = 0; ai < n; ++ai) {
    fn(ai, bi);
    // odometer increment
    for (int d = static_cast<int>(nd) - 1; d >= 0; --d) {
      size_t ud = static_cast<size_t>(d);
      ++idx[ud];
      bi += bstride[ud];
      if (idx[ud] < a[ud]) break;
      bi -= bstride[ud] * static_cast<size_t>(a[ud]);
      idx[ud] = 0;
    }
  }
}

enum class BinKind { Add, Sub, Mul };

Tensor binary_op(const char* name, BinKind kind, const Tensor& a, const Tensor& b) {
  Tensor out(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  const size_t n = a.size();
  if (a.shape() == b.shape()) {
    switch (kind) {
      case BinKind::Add:
        for (size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
        break;
      case BinKind::Sub:
        for (size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
        break;
      case BinKind::Mul:
        for (size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
        break;
    }
  } else {
    auto bstride = broadcast_strides(a.shape(), b.shape(), name);
    switch (kind) {
      case BinKind::Add:
        for_each_broadcast(a.shape(), bstride, [&](size_t ai, size_t bi) { po[ai] = pa[ai] + pb[bi]; });
        break;
      case BinKind::Sub:
        for_each_broadcast(a.shape(), bstride, [&](size_t ai, size_t bi) { po[ai] = pa[ai] - pb[bi]; });
        break;
      case BinKind::Mul:
        for_each_broadcast(a.shape(), bstride, [&](size_t ai, size_t bi) { po[ai] = pa[ai] * pb[bi]; });
        break;
    }
  }

  if (recording({&a, &b})) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    record(name, {ai, bi}, out, [name, kind, ai, bi, oi]() {
      const float* g = oi->grad.data();
      const size_t count = oi->size();
      const bool same = ai->shape == bi->shape;
      if (ai->requires_grad) {
        ai->ensure_grad();
        float* da = ai->grad.data();
        const float* pbv = bi->data.data();
        if (kind == BinKind::Mul) {
          if (same) {
            for (size_t i = 0; i < count; ++i) da[i] += g[i] * pbv[i];
          } else {
            auto bs = broadcast_strides(ai->shape, bi->shape, name);
            for_each_broadcast(ai->shape, bs, [&](size_t x, size_t y) { da[x] += g[x] * pbv[y]; });
          }
        } else {
          for (size_t i = 0; i < count; ++i) da[i] += g[i];
        }
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        float* db = bi->grad.data();
        const float* pav = ai->data.data();
        const float sign = (kind == BinKind::Sub) ? -1.0f : 1.0f;
        if (same) {
          if (kind == BinKind::Mul) {
            for (size_t i = 0; i < count; ++i) db[i] += g[i] * pav[i];
          } else {
            for (size_t i = 0; i < count; ++i) db[i] += sign * g[i];
          }
        } else {
          auto bs = broadcast_strides(ai->shape, bi->shape, name);
          if (kind == BinKind::Mul) {
            for_each_broadcast(ai->shape, bs, [&](size_t x, size_t y) { db[y] += g[x] * pav[x]; });
          } else {
            for_each_broadcast(ai->shape, bs, [&](size_t x, size_t y) { db[y] += sign * g[x]; });
          }
        }
      }
    });
  }
  return out;
}

// Elementwise unary helper. dfn(x, y) gives dy/dx from input x and output y.
template <typename FFn, typename DFn>
Tensor unary_op(const char* name, const Tensor& a, FFn&& ffn, DFn&& dfn) {
  Tensor out(a.shape());
  const float* pa = a.data();
  float* po = out.data();
  const size_t n = a.size();
  for (size_t i = 0; i < n; ++i) po[i] = ffn(pa[i]);

  if (recording({&a})) {
    auto ai = a.impl();
    auto oi = out.impl();
    record(name, {ai}, out, [ai, oi, dfn]() {
      if (!ai->requires_grad) return;
      ai->ensure_grad();
      const float* g = oi->grad.data();
      const float* x = ai->data.data();
      const float* y = oi->data.data();
      float* da = ai->grad.data();
      const size_t count = oi->size();
      for (size_t i = 0; i < count; ++i) da[i] += g[i] * dfn(x[i], y[i]);
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op("add", BinKind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op("sub", BinKind::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op("mul", BinKind::Mul, a, b); }

Tensor neg(const Tensor& a) {
  return unary_op("neg", a, [](float x) { return -x; }, [](float, float) { return -1.0f; });
}

Tensor scale(const Tensor& a, float c) {
  return unary_op("scale", a, [c](float x) { return c * x; }, [c](float, float) { return c; });
}

Tensor add_scalar(const Tensor& a, float c) {
  return unary_op("add_scalar", a, [c](float x) { return x + c; }, [](float, float) { return 1.0f; });
}

Tensor relu(const Tensor& a) {
  return unary_op("relu", a, [](float x) { return x > 0.0f ? x : 0.0f; },
                  [](float x, float) { return x > 0.0f ? 1.0f : 0.0f; });
}

Tensor leaky_relu(const Tensor& a, float slope) {
  return unary_op("leaky_relu", a, [slope](float x) { return x > 0.0f ? x : slope * x; },
                  [slope](float x, float) { return x > 0.0f ? 1.0f : slope; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op("sigmoid", a,
                  [](float x) { return 1.0f / (1.0f + std::exp(-x)); },
                  [](float, float y) { return y * (1.0f - y); });
}

Tensor tanh(const Tensor& a) {
  return unary_op("tanh", a, [](float x) { return std::tanh(x); },
                  [](float, float y) { return 1.0f - y * y; });
}

Tensor abs(const Tensor& a) {
  return unary_op("abs", a, [](float x) { return std::fabs(x); },
                  [](float x, float) { return x > 0.0f ? 1.0f : (x < 0.0f ? -1.0f : 0.0f); });
}

Tensor log(const Tensor& a) {
  return unary_op("log", a, [](float x) { return std::log(x); },
                  [](float x, float) { return 1.0f / x; });
}

Tensor clamp(const Tensor& a, float lo, float hi) {
  return unary_op("clamp", a,
                  [lo, hi](float x) { return x < lo ? lo : (x > hi ? hi : x); },
                  [lo, hi](float x, float) { return (x >= lo && x <= hi) ? 1.0f : 0.0f; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw ShapeError("matmul: expected rank-2 tensors, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  Tensor out(Shape{m, n});
  gemm_acc(m, n, k, a.data(), b.data(), out.data());

  if (recording({&a, &b})) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    record("matmul", {ai, bi}, out, [ai, bi, oi, m, n, k]() {
      const float* g = oi->grad.data();
      if (ai->requires_grad) {
        // dA = dC * B^T
        ai->ensure_grad();
        std::vector<float> bt(static_cast<size_t>(n) * k);
        transpose(k, n, bi->data.data(), bt.data());
        gemm_acc(m, k, n, g, bt.data(), ai->grad.data());
      }
      if (bi->requires_grad) {
        // dB = A^T * dC
        bi->ensure_grad();
        std::vector<float> at(static_cast<size_t>(k) * m);
        transpose(m, k, ai->data.data(), at.data());
        gemm_acc(k, n, m, at.data(), g, bi->grad.data());
      }
    });
  }
  return out;
}

namespace {

struct ReducePlan {
  Shape out_shape;
  std::vector<size_t> out_stride;  // per input dim; 0 on reduced dims
  size_t count = 1;                // elements reduced into each output slot
};

ReducePlan make_reduce_plan(const Shape& in, const std::vector<int>& axes) {
  ReducePlan plan;
  std::vector<bool> reduced(in.size(), false);
  if (axes.empty()) {
    reduced.assign(in.size(), true);
  } else {
    for (int ax : axes) {
      if (ax < 0 || ax >= static_cast<int>(in.size()))
        throw ShapeError("reduce: axis " + std::to_string(ax) + " out of range for " + shape_str(in));
      reduced[static_cast<size_t>(ax)] = true;
    }
  }
  for (size_t d = 0; d < in.size(); ++d) {
    if (reduced[d])
      plan.count *= static_cast<size_t>(in[d]);
    else
      plan.out_shape.push_back(in[d]);
  }
  plan.out_stride.assign(in.size(), 0);
  size_t stride = 1;
  for (int d = static_cast<int>(in.size()) - 1; d >= 0; --d) {
    if (!reduced[static_cast<size_t>(d)]) {
      plan.out_stride[static_cast<size_t>(d)] = stride;
      stride *= static_cast<size_t>(in[static_cast<size_t>(d)]);
    }
  }
  return plan;
}

Tensor reduce_impl(const char* name, const Tensor& a, const std::vector<int>& axes, bool mean) {
  ReducePlan plan = make_reduce_plan(a.shape(), axes);
  Tensor out(plan.out_shape, 0.0f);
  const float* pa = a.data();
  float* po = out.data();
  for_each_broadcast(a.shape(), plan.out_stride, [&](size_t ai, size_t oi) { po[oi] += pa[ai]; });
  const float inv = mean ? 1.0f / static_cast<float>(plan.count) : 1.0f;
  if (mean)
    for (size_t i = 0; i < out.size(); ++i) po[i] *= inv;

  if (recording({&a})) {
    auto aimpl = a.impl();
    auto oimpl = out.impl();
    record(name, {aimpl}, out, [aimpl, oimpl, plan, inv]() {
      if (!aimpl->requires_grad) return;
      aimpl->ensure_grad();
      float* da = aimpl->grad.data();
      const float* g = oimpl->grad.data();
      for_each_broadcast(aimpl->shape, plan.out_stride,
                         [&](size_t ai, size_t oi) { da[ai] += g[oi] * inv; });
    });
  }
  return out;
}

}  // namespace

Tensor reduce_sum(const Tensor& a, const std::vector<int>& axes) {
  return reduce_impl("reduce_sum", a, axes, false);
}

Tensor reduce_mean(const Tensor& a, const std::vector<int>& axes) {
  return reduce_impl("reduce_mean", a, axes, true);
}

Tensor reshape(const Tensor& a, Shape new_shape) {
  if (shape_size(new_shape) != a.size())
    throw ShapeError("reshape: size mismatch " + shape_str(a.shape()) + " -> " + shape_str(new_shape));
  Tensor out(std::move(new_shape), std::vector<float>(a.data(), a.data() + a.size()));
  if (recording({&a})) {
    auto ai = a.impl();
    auto oi = out.impl();
    record("reshape", {ai}, out, [ai, oi]() {
      if (!ai->requires_grad) return;
      ai->ensure_grad();
      const float* g = oi->grad.data();
      float* da = ai->grad.data();
      for (size_t i = 0; i < oi->size(); ++i) da[i] += g[i];
    });
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 4 || b.ndim() != 4)
    throw ShapeError("concat_channels: expected rank-4 tensors");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw ShapeError("concat_channels: batch/spatial mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const int bs = a.dim(0), c1 = a.dim(1), c2 = b.dim(1), h = a.dim(2), w = a.dim(3);
  const size_t plane = static_cast<size_t>(h) * w;
  Tensor out(Shape{bs, c1 + c2, h, w});
  float* po = out.data();
  const float* pa = a.data();
  const float* pb = b.data();
  for (int n = 0; n < bs; ++n) {
    std::memcpy(po + static_cast<size_t>(n) * (c1 + c2) * plane,
                pa + static_cast<size_t>(n) * c1 * plane, sizeof(float) * c1 * plane);
    std::memcpy(po + static_cast<size_t>(n) * (c1 + c2) * plane + c1 * plane,
                pb + static_cast<size_t>(n) * c2 * plane, sizeof(float) * c2 * plane);
  }
  if (recording({&a, &b})) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    record("concat_channels", {ai, bi}, out, [ai, bi, oi, bs, c1, c2, plane]() {
      const float* g = oi->grad.data();
      if (ai->requires_grad) {
        ai->ensure_grad();
        float* da = ai->grad.data();
        for (int n = 0; n < bs; ++n) {
          const float* gs = g + static_cast<size_t>(n) * (c1 + c2) * plane;
          float* ds = da + static_cast<size_t>(n) * c1 * plane;
          for (size_t i = 0; i < static_cast<size_t>(c1) * plane; ++i) ds[i] += gs[i];
        }
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        float* db = bi->grad.data();
        for (int n = 0; n < bs; ++n) {
          const float* gs = g + static_cast<size_t>(n) * (c1 + c2) * plane + c1 * plane;
          float* ds = db + static_cast<size_t>(n) * c2 * plane;
          for (size_t i = 0; i < static_cast<size_t>(c2) * plane; ++i) ds[i] += gs[i];
        }
      }
    });
  }
  return out;
}

Tensor upsample2_nearest(const Tensor& a) {
  if (a.ndim() != 4) throw ShapeError("upsample2_nearest: expected rank-4 tensor");
  const int bs = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  Tensor out(Shape{bs, c, 2 * h, 2 * w});
  const float* pa = a.data();
  float* po = out.data();
  for (int nc = 0; nc < bs * c; ++nc) {
    const float* src = pa + static_cast<size_t>(nc) * h * w;
    float* dst = po + static_cast<size_t>(nc) * 4 * h * w;
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const float v = src[static_cast<size_t>(i) * w + j];
        float* d = dst + static_cast<size_t>(2 * i) * 2 * w + 2 * j;
        d[0] = v;
        d[1] = v;
        d[2 * w] = v;
        d[2 * w + 1] = v;
      }
    }
  }
  if (recording({&a})) {
    auto ai = a.impl();
    auto oi = out.impl();
    record("upsample2_nearest", {ai}, out, [ai, oi, bs, c, h, w]() {
      if (!ai->requires_grad) return;
      ai->ensure_grad();
      const float* g = oi->grad.data();
      float* da = ai->grad.data();
      for (int nc = 0; nc < bs * c; ++nc) {
        const float* gs = g + static_cast<size_t>(nc) * 4 * h * w;
        float* ds = da + static_cast<size_t>(nc) * h * w;
        for (int i = 0; i < h; ++i) {
          for (int j = 0; j < w; ++j) {
            const float* s = gs + static_cast<size_t>(2 * i) * 2 * w + 2 * j;
            ds[static_cast<size_t>(i) * w + j] += s[0] + s[1] + s[2 * w] + s[2 * w + 1];
          }
        }
      }
    });
  }
  return out;
}

Tensor downsample2_nearest(const Tensor& a) {
  if (a.ndim() != 4) throw ShapeError("downsample2_nearest: expected rank-4 tensor");
  const int bs = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    throw ShapeError("downsample2_nearest: spatial dims must be even, got " + shape_str(a.shape()));
  const int oh = h / 2, ow = w / 2;
  Tensor out(Shape{bs, c, oh, ow});
  const float* pa = a.data();
  float* po = out.data();
  for (int nc = 0; nc < bs * c; ++nc) {
    const float* src = pa + static_cast<size_t>(nc) * h * w;
    float* dst = po + static_cast<size_t>(nc) * oh * ow;
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j)
        dst[static_cast<size_t>(i) * ow + j] = src[static_cast<size_t>(2 * i) * w + 2 * j];
  }
  if (recording({&a})) {
    auto ai = a.impl();
    auto oi = out.impl();
    record("downsample2_nearest", {ai}, out, [ai, oi, bs, c, h, w, oh, ow]() {
      if (!ai->requires_grad) return;
      ai->ensure_grad();
      const float* g = oi->grad.data();
      float* da = ai->grad.data();
      for (int nc = 0; nc < bs * c; ++nc) {
        const float* gs = g + static_cast<size_t>(nc) * oh * ow;
        float* ds = da + static_cast<size_t>(nc) * h * w;
        for (int i = 0; i < oh; ++i)
          for (int j = 0; j < ow; ++j)
            ds[static_cast<size_t>(2 * i) * w + 2 * j] += gs[static_cast<size_t>(i) * ow + j];
      }
    });
  }
  return out;
}

}  // namespace progseg
