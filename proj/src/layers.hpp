#pragma once

#include <string>
#include <vector>

#include "nn_ops.hpp"
#include "tensor.hpp"

namespace progseg {

// Named tensor with a role flag: trainable parameters get optimizer state,
// buffers (batchnorm running stats) are checkpointed but never updated by
// the optimizer.
struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable;
};

using TensorDict = std::vector<NamedTensor>;

struct Conv2d {
  Tensor weight;  // [oc, ic, kh, kw]
  Tensor bias;    // [oc]
  int stride = 1;
  int padding = 0;

  static Conv2d make(int in_ch, int out_ch, int k, int stride, int padding, Rng& rng);
  Tensor forward(const Tensor& x) const { return conv2d_op(x, weight, bias, stride, padding); }
  void collect(TensorDict& out, const std::string& prefix) const;
};

struct ConvTranspose2d {
  Tensor weight;  // [ic, oc, kh, kw]
  Tensor bias;    // [oc]
  int stride = 1;
  int padding = 0;

  static ConvTranspose2d make(int in_ch, int out_ch, int k, int stride, int padding, Rng& rng);
  Tensor forward(const Tensor& x) const {
    return conv_transpose2d_op(x, weight, bias, stride, padding);
  }
  void collect(TensorDict& out, const std::string& prefix) const;
};

struct BatchNorm2d {
  Tensor gamma, beta;
  Tensor running_mean, running_var;
  float momentum = 0.9f;
  float eps = 1e-9f;

  static BatchNorm2d make(int channels, float momentum, float eps);
  Tensor forward(const Tensor& x, bool training) {
    return batchnorm_op(x, gamma, beta, running_mean, running_var, momentum, eps, training);
  }
  void collect(TensorDict& out, const std::string& prefix) const;
};

struct Dropout {
  float p = 0.5f;

  Tensor forward(const Tensor& x, bool active, Rng& rng) const {
    return active ? dropout_op(x, p, rng) : scale(x, 1.0f);
  }
};

// Fresh-parameter initialization: weights ~ Normal(0, 0.02), biases zero
// (batchnorm starts at gamma=1, beta=0 in BatchNorm2d::make).
void init_conv(Tensor& weight, Tensor& bias, Rng& rng);

struct AdamConfig {
  float lr = 2e-4f;
  float beta1 = 0.5f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// Adam with bias correction. Moment buffers are keyed by parameter name so
// they survive model growth and checkpointing; parameters added later start
// with zero moments.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  // One update over every trainable entry. Missing gradient -> ContractError.
  // Gradients are cleared after the update.
  void step(const TensorDict& params);

  int64_t step_count() const { return step_; }
  void set_step_count(int64_t s) { step_ = s; }
  const AdamConfig& config() const { return cfg_; }

  // Moment access for checkpointing, in first-seen order.
  struct Slot {
    std::string name;
    std::vector<float> m, v;
  };
  const std::vector<Slot>& slots() const { return slots_; }
  void restore_slot(const std::string& name, std::vector<float> m, std::vector<float> v);

 private:
  Slot& slot_for(const std::string& name, size_t size);

  AdamConfig cfg_;
  int64_t step_ = 0;
  std::vector<Slot> slots_;
};

}  // namespace progseg
