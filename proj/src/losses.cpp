#include "losses.hpp"

namespace progseg {

namespace {
constexpr float kScoreEps = 1e-7f;

Tensor clamped_log(const Tensor& scores) {
  return progseg::log(clamp(scores, kScoreEps, 1.0f - kScoreEps));
}

Tensor one_minus(const Tensor& scores) { return add_scalar(neg(scores), 1.0f); }
}  // namespace

Tensor discriminator_loss(const Tensor& d_real, const Tensor& d_fake) {
  Tensor real_term = reduce_mean(clamped_log(d_real));
  Tensor fake_term = reduce_mean(clamped_log(one_minus(d_fake)));
  return neg(add(real_term, fake_term));
}

GeneratorLoss generator_loss(const Tensor& d_fake, const Tensor& y_hat, const Tensor& y,
                             const ObjectiveConfig& cfg) {
  if (y_hat.shape() != y.shape())
    throw ShapeError("generator_loss: prediction " + shape_str(y_hat.shape()) +
                     " vs target " + shape_str(y.shape()));
  GeneratorLoss out;
  if (cfg.gan_mode == GanMode::NonSaturating) {
    out.adv = neg(reduce_mean(clamped_log(d_fake)));
  } else {
    out.adv = reduce_mean(clamped_log(one_minus(d_fake)));
  }
  out.l1 = reduce_mean(progseg::abs(sub(y, y_hat)));
  out.total = add(out.adv, scale(out.l1, cfg.lambda_l1));
  return out;
}

}  // namespace progseg
