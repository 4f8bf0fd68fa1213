#include "layers.hpp"

#include <cmath>

namespace progseg {

namespace {
constexpr float kInitStd = 0.02f;
}

void init_conv(Tensor& weight, Tensor& bias, Rng& rng) {
  float* w = weight.data();
  for (size_t i = 0; i < weight.size(); ++i) w[i] = rng.normal(0.0f, kInitStd);
  float* b = bias.data();
  for (size_t i = 0; i < bias.size(); ++i) b[i] = 0.0f;
}

Conv2d Conv2d::make(int in_ch, int out_ch, int k, int stride, int padding, Rng& rng) {
  Conv2d c;
  c.weight = Tensor(Shape{out_ch, in_ch, k, k});
  c.bias = Tensor(Shape{out_ch});
  c.stride = stride;
  c.padding = padding;
  init_conv(c.weight, c.bias, rng);
  c.weight.set_requires_grad(true);
  c.bias.set_requires_grad(true);
  return c;
}

void Conv2d::collect(TensorDict& out, const std::string& prefix) const {
  out.push_back({prefix + ".w", weight, true});
  out.push_back({prefix + ".b", bias, true});
}

ConvTranspose2d ConvTranspose2d::make(int in_ch, int out_ch, int k, int stride, int padding,
                                      Rng& rng) {
  ConvTranspose2d c;
  c.weight = Tensor(Shape{in_ch, out_ch, k, k});
  c.bias = Tensor(Shape{out_ch});
  c.stride = stride;
  c.padding = padding;
  init_conv(c.weight, c.bias, rng);
  c.weight.set_requires_grad(true);
  c.bias.set_requires_grad(true);
  return c;
}

void ConvTranspose2d::collect(TensorDict& out, const std::string& prefix) const {
  out.push_back({prefix + ".w", weight, true});
  out.push_back({prefix + ".b", bias, true});
}

BatchNorm2d BatchNorm2d::make(int channels, float momentum, float eps) {
  BatchNorm2d bn;
  bn.gamma = Tensor(Shape{channels}, 1.0f);
  bn.beta = Tensor(Shape{channels}, 0.0f);
  bn.running_mean = Tensor(Shape{channels}, 0.0f);
  bn.running_var = Tensor(Shape{channels}, 1.0f);
  bn.momentum = momentum;
  bn.eps = eps;
  bn.gamma.set_requires_grad(true);
  bn.beta.set_requires_grad(true);
  return bn;
}

void BatchNorm2d::collect(TensorDict& out, const std::string& prefix) const {
  out.push_back({prefix + ".gamma", gamma, true});
  out.push_back({prefix + ".beta", beta, true});
  out.push_back({prefix + ".running_mean", running_mean, false});
  out.push_back({prefix + ".running_var", running_var, false});
}

Adam::Slot& Adam::slot_for(const std::string& name, size_t size) {
  for (auto& s : slots_) {
    if (s.name == name) return s;
  }
  slots_.push_back(Slot{name, std::vector<float>(size, 0.0f), std::vector<float>(size, 0.0f)});
  return slots_.back();
}

void Adam::restore_slot(const std::string& name, std::vector<float> m, std::vector<float> v) {
  Slot& s = slot_for(name, m.size());
  s.m = std::move(m);
  s.v = std::move(v);
}

void Adam::step(const TensorDict& params) {
  ++step_;
  const double b1t = std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(step_));
  const double b2t = std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(step_));
  const float corr1 = static_cast<float>(1.0 / (1.0 - b1t));
  const float corr2 = static_cast<float>(1.0 / (1.0 - b2t));

  for (const auto& entry : params) {
    if (!entry.trainable) continue;
    Tensor t = entry.tensor;
    if (!t.has_grad())
      throw ContractError("adam: parameter '" + entry.name + "' has no gradient");
    Slot& s = slot_for(entry.name, t.size());
    float* p = t.data();
    const float* g = t.grad();
    for (size_t i = 0; i < t.size(); ++i) {
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0f - cfg_.beta1) * g[i];
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0f - cfg_.beta2) * g[i] * g[i];
      const float mhat = s.m[i] * corr1;
      const float vhat = s.v[i] * corr2;
      p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    t.zero_grad();
  }
}

}  // namespace progseg
