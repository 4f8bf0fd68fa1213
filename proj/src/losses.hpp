#pragma once

#include "tensor.hpp"

namespace progseg {

enum class GanMode { NonSaturating, Minimax };

struct ObjectiveConfig {
  float lambda_l1 = 100.0f;
  GanMode gan_mode = GanMode::NonSaturating;
};

// Scores are clamped into [1e-7, 1-1e-7] before any log.
// L_D = -mean log D(real) - mean log(1 - D(fake)); minimized when the
// discriminator separates real from generated masks.
Tensor discriminator_loss(const Tensor& d_real, const Tensor& d_fake);

struct GeneratorLoss {
  Tensor total;
  Tensor adv;
  Tensor l1;
};

// adv = -mean log D(fake)          (non-saturating)
//     = +mean log(1 - D(fake))     (minimax)
// l1  = mean |y - y_hat|
// total = adv + lambda_l1 * l1
GeneratorLoss generator_loss(const Tensor& d_fake, const Tensor& y_hat, const Tensor& y,
                             const ObjectiveConfig& cfg);

}  // namespace progseg
