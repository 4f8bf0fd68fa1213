#include "model.hpp"

#include <cmath>

namespace progseg {

namespace {

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

int ilog2(int v) {
  int r = 0;
  while ((1 << r) < v) ++r;
  return r;
}

}  // namespace

void ArchConfig::validate() const {
  if (!is_pow2(full_res) || !is_pow2(base_res))
    throw ConfigError("full_res and base_res must be powers of two");
  if (base_res < 4) throw ConfigError("base_res must be >= 4");
  if (base_res > full_res) throw ConfigError("base_res must not exceed full_res");
  if (base_channels < 1) throw ConfigError("base_channels must be positive");
  if (max_channels < base_channels) throw ConfigError("max_channels must be >= base_channels");
}

int ArchConfig::encoder_depth() const { return ilog2(full_res) - ilog2(latent_res()); }

int ArchConfig::max_stages() const { return ilog2(full_res) - ilog2(base_res) + 1; }

int ArchConfig::stage_resolution(int stage) const { return base_res << (stage - 1); }

int ArchConfig::enc_width(int block) const {
  const long long w = static_cast<long long>(base_channels) << block;
  return static_cast<int>(w < max_channels ? w : max_channels);
}

int ArchConfig::enc_act_width(int res) const {
  // encoder block j outputs resolution full_res / 2^(j+1)
  const int j = ilog2(full_res) - ilog2(res) - 1;
  return enc_width(j);
}

int ArchConfig::dec_width(int stage) const {
  const int res = stage_resolution(stage);
  return res < full_res ? enc_act_width(res) : base_channels;
}

int ArchConfig::skip_width(int stage) const {
  const int res = stage_resolution(stage);
  return res < full_res ? enc_act_width(res) : 0;
}

GrowthState initial_growth_state(const ArchConfig& arch) {
  return GrowthState{1, arch.base_res, 1.0f, 0};
}

// ---- generator ---------------------------------------------------------

Generator::Generator(const ArchConfig& arch, Rng& rng) : arch_(arch) {
  arch_.validate();
  const int depth = arch_.encoder_depth();
  int in_ch = 3;
  for (int j = 0; j < depth; ++j) {
    EncBlock blk;
    blk.conv = Conv2d::make(in_ch, arch_.enc_width(j), 4, 2, 1, rng);
    if (j > 0) blk.bn = BatchNorm2d::make(arch_.enc_width(j), arch_.bn_momentum, arch_.bn_eps);
    in_ch = arch_.enc_width(j);
    encoder_.push_back(std::move(blk));
  }
  dropout_.p = arch_.dropout_p;
  grow(rng);  // stage 1 decoder block + head
}

void Generator::grow(Rng& rng) {
  const int stage = built_stages() + 1;
  if (stage > arch_.max_stages())
    throw ContractError("generator: cannot grow past stage " + std::to_string(arch_.max_stages()));
  const int in_ch = stage == 1 ? arch_.latent_width() : arch_.stage_feature_width(stage - 1);
  DecBlock blk;
  blk.convt = ConvTranspose2d::make(in_ch, arch_.dec_width(stage), 4, 2, 1, rng);
  blk.bn = BatchNorm2d::make(arch_.dec_width(stage), arch_.bn_momentum, arch_.bn_eps);
  blk.has_dropout = stage <= 3;
  decoder_.push_back(std::move(blk));
  heads_.push_back(Conv2d::make(arch_.stage_feature_width(stage), 1, 1, 1, 0, rng));
}

Tensor Generator::head_output(int stage, const Tensor& features) const {
  Tensor h = heads_[static_cast<size_t>(stage - 1)].forward(features);
  return add_scalar(scale(progseg::tanh(h), 0.5f), 0.5f);
}

Tensor Generator::forward(const Tensor& x, const GrowthState& gs, RunMode mode, Rng& dropout_rng) {
  if (gs.stage > arch_.max_stages())
    throw ContractError("generator: stage " + std::to_string(gs.stage) + " exceeds max stage " +
                        std::to_string(arch_.max_stages()));
  if (gs.stage > built_stages())
    throw ContractError("generator: stage " + std::to_string(gs.stage) + " not built yet");
  if (x.ndim() != 4 || x.dim(1) != 3 || x.dim(2) != arch_.full_res || x.dim(3) != arch_.full_res)
    throw ShapeError("generator: input must be [b,3," + std::to_string(arch_.full_res) + "," +
                     std::to_string(arch_.full_res) + "], got " + shape_str(x.shape()));

  const bool train = mode == RunMode::Train;
  const bool drop = mode == RunMode::Train || mode == RunMode::EvalStochastic;

  std::vector<Tensor> acts;
  Tensor a = x;
  for (auto& blk : encoder_) {
    a = blk.conv.forward(a);
    if (blk.bn) a = blk.bn->forward(a, train);
    a = leaky_relu(a, 0.2f);
    acts.push_back(a);
  }

  const bool fading = gs.stage > 1 && gs.alpha < 1.0f;
  Tensor feat = acts.back();
  Tensor prev_feat;
  for (int s = 1; s <= gs.stage; ++s) {
    if (s == gs.stage && fading) prev_feat = feat;
    auto& blk = decoder_[static_cast<size_t>(s - 1)];
    Tensor f = blk.convt.forward(feat);
    f = blk.bn.forward(f, train);
    if (blk.has_dropout) f = dropout_.forward(f, drop, dropout_rng);
    f = relu(f);
    const int res = arch_.stage_resolution(s);
    if (res < arch_.full_res) {
      // mirror skip: encoder activation at the same resolution
      const int j = ilog2(arch_.full_res) - ilog2(res) - 1;
      f = concat_channels(f, acts[static_cast<size_t>(j)]);
    }
    feat = f;
  }

  Tensor out = head_output(gs.stage, feat);
  if (fading) {
    Tensor old = upsample2_nearest(head_output(gs.stage - 1, prev_feat));
    out = add(scale(out, gs.alpha), scale(old, 1.0f - gs.alpha));
  }
  return out;
}

void Generator::collect(TensorDict& out) const {
  for (size_t j = 0; j < encoder_.size(); ++j) {
    const std::string p = "g.enc" + std::to_string(j);
    encoder_[j].conv.collect(out, p + ".conv");
    if (encoder_[j].bn) encoder_[j].bn->collect(out, p + ".bn");
  }
  for (size_t s = 0; s < decoder_.size(); ++s) {
    const std::string p = "g.dec" + std::to_string(s + 1);
    decoder_[s].convt.collect(out, p + ".convt");
    decoder_[s].bn.collect(out, p + ".bn");
  }
  for (size_t s = 0; s < heads_.size(); ++s)
    heads_[s].collect(out, "g.head" + std::to_string(s + 1));
}

size_t Generator::encoder_param_count() const {
  TensorDict d;
  for (size_t j = 0; j < encoder_.size(); ++j) {
    const std::string p = "g.enc" + std::to_string(j);
    encoder_[j].conv.collect(d, p + ".conv");
    if (encoder_[j].bn) encoder_[j].bn->collect(d, p + ".bn");
  }
  size_t n = 0;
  for (const auto& e : d) n += e.tensor.size();
  return n;
}

// ---- discriminator ------------------------------------------------------

Discriminator::Discriminator(const ArchConfig& arch, Rng& rng) : arch_(arch) {
  arch_.validate();
  score_w = Tensor(Shape{arch_.latent_width(), 1});
  score_b = Tensor(Shape{1});
  init_conv(score_w, score_b, rng);
  score_w.set_requires_grad(true);
  score_b.set_requires_grad(true);
  grow(rng);
}

void Discriminator::grow(Rng& rng) {
  const int stage = built_stages() + 1;
  if (stage > arch_.max_stages())
    throw ContractError("discriminator: cannot grow past stage " +
                        std::to_string(arch_.max_stages()));
  const int fw = arch_.dec_width(stage);
  from_mask_.push_back(Conv2d::make(arch_.disc_in_channels(), fw, 1, 1, 0, rng));
  const int out_ch = stage == 1 ? arch_.latent_width() : arch_.dec_width(stage - 1);
  DBlock blk;
  blk.conv = Conv2d::make(fw, out_ch, 4, 2, 1, rng);
  blk.bn = BatchNorm2d::make(out_ch, arch_.bn_momentum, arch_.bn_eps);
  blocks_.push_back(std::move(blk));
}

Tensor Discriminator::forward(const Tensor& img_at_stage, const Tensor& mask,
                              const GrowthState& gs, RunMode mode) {
  if (gs.stage > built_stages())
    throw ContractError("discriminator: stage " + std::to_string(gs.stage) + " not built yet");
  const int res = arch_.stage_resolution(gs.stage);
  if (mask.ndim() != 4 || mask.dim(1) != 1 || mask.dim(2) != res || mask.dim(3) != res)
    throw ShapeError("discriminator: mask must be [b,1," + std::to_string(res) + "," +
                     std::to_string(res) + "], got " + shape_str(mask.shape()));
  const bool train = mode == RunMode::Train;

  Tensor in = mask;
  if (arch_.disc_sees_input) {
    if (!img_at_stage.defined() || img_at_stage.dim(2) != res)
      throw ShapeError("discriminator: stage-resolution input image required");
    in = concat_channels(img_at_stage, mask);
  }

  const int s = gs.stage;
  Tensor f = leaky_relu(from_mask_[static_cast<size_t>(s - 1)].forward(in), 0.2f);
  auto& top = blocks_[static_cast<size_t>(s - 1)];
  Tensor a = leaky_relu(top.bn.forward(top.conv.forward(f), train), 0.2f);
  if (s > 1 && gs.alpha < 1.0f) {
    Tensor old = leaky_relu(from_mask_[static_cast<size_t>(s - 2)].forward(downsample2_nearest(in)),
                            0.2f);
    a = add(scale(a, gs.alpha), scale(old, 1.0f - gs.alpha));
  }
  for (int i = s - 1; i >= 1; --i) {
    auto& blk = blocks_[static_cast<size_t>(i - 1)];
    a = leaky_relu(blk.bn.forward(blk.conv.forward(a), train), 0.2f);
  }
  Tensor pooled = reduce_mean(a, {2, 3});
  Tensor score = add(matmul(pooled, score_w), score_b);
  return sigmoid(score);
}

void Discriminator::collect(TensorDict& out) const {
  for (size_t s = 0; s < from_mask_.size(); ++s)
    from_mask_[s].collect(out, "d.from" + std::to_string(s + 1));
  for (size_t s = 0; s < blocks_.size(); ++s) {
    const std::string p = "d.block" + std::to_string(s + 1);
    blocks_[s].conv.collect(out, p + ".conv");
    blocks_[s].bn.collect(out, p + ".bn");
  }
  out.push_back({"d.score.w", score_w, true});
  out.push_back({"d.score.b", score_b, true});
}

// ---- growth protocol -----------------------------------------------------

GrowthState grow(Generator& g, Discriminator* d, const GrowthState& gs, Rng& rng) {
  if (gs.alpha < 1.0f)
    throw ContractError("grow: current stage not fully blended (alpha < 1)");
  if (gs.stage >= g.arch().max_stages())
    throw ContractError("grow: already at max stage " + std::to_string(g.arch().max_stages()));
  g.grow(rng);
  if (d) d->grow(rng);
  GrowthState next;
  next.stage = gs.stage + 1;
  next.resolution = g.arch().stage_resolution(next.stage);
  next.alpha = 0.0f;
  next.iters_in_stage = 0;
  return next;
}

Tensor infer_mask(Generator& g, const Tensor& x, const GrowthState& gs, float threshold,
                  RunMode mode, Rng& dropout_rng) {
  Tensor y = g.forward(x, gs, mode, dropout_rng);
  Tensor out(y.shape());
  const float* p = y.data();
  float* o = out.data();
  for (size_t i = 0; i < y.size(); ++i) o[i] = p[i] >= threshold ? 1.0f : 0.0f;
  return out;
}

}  // namespace progseg
