#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace progseg {

using Shape = std::vector<int>;

size_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

// Storage plus gradient slot. Referenced via shared_ptr so tensors have
// cheap value semantics and the recorded graph keeps inputs alive.
struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;

  size_t size() const { return data.size(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor scalar(float v);
  static Tensor zeros(const Shape& s) { return Tensor(s, 0.0f); }
  static Tensor ones(const Shape& s) { return Tensor(s, 1.0f); }
  static Tensor full(const Shape& s, float v) { return Tensor(s, v); }
  static Tensor randn(const Shape& s, Rng& rng, float mean = 0.0f, float stddev = 1.0f);
  static Tensor rand_uniform(const Shape& s, Rng& rng, float lo = 0.0f, float hi = 1.0f);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  size_t size() const { return impl_->data.size(); }

  float* data() { return impl_->data.data(); }
  const float* data() const { return impl_->data.data(); }
  float item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    impl_->requires_grad = b;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  float* grad();              // allocates zeros on first use
  const float* grad() const;  // nullptr when absent
  void zero_grad() { impl_->grad.clear(); }
  Tensor grad_as_tensor() const;

  // Same data buffer, detached from autograd (no recording, no grad flag).
  Tensor detach() const;
  // Deep copy of the data (grad not copied).
  Tensor clone() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// One recorded primitive. `backward` reads output->grad and accumulates
// into the grads of the inputs that require it.
struct Node {
  const char* op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::shared_ptr<TensorImpl> output;
  std::function<void()> backward;
};

// Tape of one forward pass, recorded in execution order (which is a valid
// topological order). A fresh graph is built every step.
class Graph {
 public:
  void record(Node node) { nodes_.push_back(std::move(node)); }
  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Reverse sweep from a scalar loss. Visits each node exactly once, in
  // reverse recording order; nodes the loss never reached are skipped.
  void backward(const Tensor& loss);

 private:
  std::vector<Node> nodes_;
};

// RAII recording scope; ops record onto the innermost active graph of the
// current thread. With no active graph, ops run forward-only.
class GraphScope {
 public:
  explicit GraphScope(Graph& g);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph* prev_;
};

Graph* active_graph();

// Convenience: backward on the active graph.
void backward(const Tensor& loss);

// ---- elementwise / linear algebra primitives ------------------------------
// Binary ops require equal shapes, or `b` broadcastable to `a` by the
// trailing-dimension rule (align shapes at the trailing end; each b-dim is
// equal or 1). Backward sums over broadcast axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, float c);
Tensor add_scalar(const Tensor& a, float c);

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);

// Reduction over `axes` (empty = all axes; result is a rank-0 scalar).
// Accumulation is deterministic: input elements are visited in row-major
// order and added left to right.
Tensor reduce_sum(const Tensor& a, const std::vector<int>& axes = {});
Tensor reduce_mean(const Tensor& a, const std::vector<int>& axes = {});

Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, float slope = 0.2f);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor log(const Tensor& a);
Tensor clamp(const Tensor& a, float lo, float hi);

Tensor reshape(const Tensor& a, Shape new_shape);

// [b,c1,h,w] ++ [b,c2,h,w] -> [b,c1+c2,h,w]; backward splits the gradient.
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Nearest-neighbor x2 in both spatial dims of [b,c,h,w].
Tensor upsample2_nearest(const Tensor& a);
// Keeps the top-left sample of every 2x2 block.
Tensor downsample2_nearest(const Tensor& a);

}  // namespace progseg
