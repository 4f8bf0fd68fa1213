#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "layers.hpp"

namespace progseg {

enum class RunMode {
  Train,              // batch statistics, dropout active
  EvalDeterministic,  // running statistics, dropout off
  EvalStochastic,     // running statistics, dropout active (stochastic masks)
};

// Geometry of the growing U-Net. The encoder consumes the full input
// resolution at every stage and bottoms out at base_res/2. Decoder block s
// doubles resolution; stage s therefore emits base_res * 2^(s-1). Channel
// widths double per halving, capped at max_channels, so the stock preset
// (full_res 256, base_channels 64) yields encoder widths
// 64,128,256,512,512,512,512,512.
struct ArchConfig {
  int full_res = 64;
  int base_res = 8;
  int base_channels = 8;
  int max_channels = 512;
  bool disc_sees_input = false;
  float dropout_p = 0.5f;
  float bn_momentum = 0.9f;
  float bn_eps = 1e-9f;

  void validate() const;
  int latent_res() const { return base_res / 2; }
  int encoder_depth() const;
  int max_stages() const;
  int stage_resolution(int stage) const;

  int enc_width(int block) const;  // 0-based encoder block
  int enc_act_width(int res) const;  // width of the encoder activation at a resolution
  int dec_width(int stage) const;    // decoder block output channels, 1-based
  int skip_width(int stage) const;   // concatenated skip channels (0 at full res)
  int stage_feature_width(int stage) const { return dec_width(stage) + skip_width(stage); }
  int latent_width() const { return enc_width(encoder_depth() - 1); }
  int disc_in_channels() const { return disc_sees_input ? 4 : 1; }
};

struct GrowthState {
  int stage = 1;
  int resolution = 0;
  float alpha = 1.0f;
  int64_t iters_in_stage = 0;
};

GrowthState initial_growth_state(const ArchConfig& arch);

class Generator {
 public:
  Generator(const ArchConfig& arch, Rng& rng);

  // x must be [b,3,full_res,full_res]; returns the stage-resolution mask in
  // [0,1]. During fade-in (alpha < 1) the previous stage's head output is
  // upsampled and blended:  alpha*new + (1-alpha)*up2(old).
  Tensor forward(const Tensor& x, const GrowthState& gs, RunMode mode, Rng& dropout_rng);

  void grow(Rng& rng);
  int built_stages() const { return static_cast<int>(decoder_.size()); }
  const ArchConfig& arch() const { return arch_; }

  void collect(TensorDict& out) const;
  size_t encoder_param_count() const;

 private:
  struct EncBlock {
    Conv2d conv;
    std::optional<BatchNorm2d> bn;
  };
  struct DecBlock {
    ConvTranspose2d convt;
    BatchNorm2d bn;
    bool has_dropout;
  };

  Tensor head_output(int stage, const Tensor& features) const;

  ArchConfig arch_;
  std::vector<EncBlock> encoder_;
  std::vector<DecBlock> decoder_;
  std::vector<Conv2d> heads_;  // per stage, 1x1 conv -> tanh -> [0,1]
  Dropout dropout_;
};

class Discriminator {
 public:
  Discriminator(const ArchConfig& arch, Rng& rng);

  // mask at stage resolution; img_at_stage required (and consumed) only
  // when the architecture is conditioned on the input image. Scores in
  // (0,1), shape [b,1]. Fade-in mirrors the generator on the input side.
  Tensor forward(const Tensor& img_at_stage, const Tensor& mask, const GrowthState& gs,
                 RunMode mode);

  void grow(Rng& rng);
  int built_stages() const { return static_cast<int>(blocks_.size()); }

  void collect(TensorDict& out) const;

 private:
  struct DBlock {
    Conv2d conv;
    BatchNorm2d bn;
  };

  ArchConfig arch_;
  std::vector<Conv2d> from_mask_;  // per stage, 1x1 lift to feature width
  std::vector<DBlock> blocks_;     // block s halves the stage-s resolution
  Tensor score_w, score_b;         // linear head after global average pool
};

// Adds one decoder block, mask head, discriminator block and from-mask head
// (discriminator optional). Pre-existing parameters are untouched; returns
// the next stage's growth state with alpha = 0.
GrowthState grow(Generator& g, Discriminator* d, const GrowthState& gs, Rng& rng);

// Binary mask: 1 where the head output is >= threshold.
Tensor infer_mask(Generator& g, const Tensor& x, const GrowthState& gs, float threshold,
                  RunMode mode, Rng& dropout_rng);

}  // namespace progseg
