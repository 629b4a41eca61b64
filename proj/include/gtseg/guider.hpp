#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gtseg/ops.hpp"
#include "gtseg/params.hpp"

namespace gtseg {

enum class PositionalEncoding {
  factorized_2d, // half the channels encode the patch row, half the column
  raster_1d,     // one sinusoid table over raster token order
};

struct GuiderConfig {
  int feature_dim = 128;
  int embed_dim = 512;
  int num_blocks = 2;
  int patch_size = 4;
  int num_heads = 8;
  double mlp_ratio = 4.0;
  bool zero_init_input = true;  // Z1 starts at exactly zero
  bool zero_init_output = true; // Z2 starts at exactly zero
  bool skip_connection = true;  // reconstruct = offset + f_ini
  PositionalEncoding positional_encoding = PositionalEncoding::factorized_2d;

  void validate() const;
};

// Sinusoidal table [tokens, embed_dim] for a grid_h x grid_w patch grid.
Tensor sinusoidal_positions(int grid_h, int grid_w, int embed_dim, PositionalEncoding kind);

// Training-only module that turns mixed-image features into pseudo
// target-domain features.
//
//   f_ini  = M_scale * t + (1 - M_scale) * f_m
//   offset = Z2(A(Z1(f_ini)))
//   f_t    = offset + f_ini
//
// A is patch embedding, a fixed positional table, pre-norm transformer
// blocks, and a per-patch linear map back to patch_size^2 * feature_dim.
// Z1 and Z2 are 1x1 convs on feature_dim; with zero init the module starts
// as the identity on f_ini.
class Guider {
public:
  Guider(GuiderConfig config, std::uint64_t seed);

  // mask_scale holds N * h * w binary entries in NHW order.
  ag::Var init_features(const ag::Var &mixed_features, std::span<const std::uint8_t> mask_scale) const;
  ag::Var gia_forward(const ag::Var &initial) const;
  ag::Var reconstruct(const ag::Var &mixed_features, std::span<const std::uint8_t> mask_scale) const;

  // Names carry the "guider/" prefix.
  ParamList parameters() const;
  const GuiderConfig &config() const { return config_; }

  const ag::Var &token() const { return token_; }

private:
  struct Block {
    ag::Var norm1_w, norm1_b, qkv_w, qkv_b, proj_w, proj_b;
    ag::Var norm2_w, norm2_b, fc1_w, fc1_b, fc2_w, fc2_b;
  };

  void check_features(const ag::Var &f) const;

  GuiderConfig config_;
  ag::Var token_;
  ag::Var z1_w_, z1_b_, z2_w_, z2_b_;
  ag::Var embed_w_, embed_b_;
  std::vector<Block> blocks_;
  ag::Var out_w_, out_b_;
};

} // namespace gtseg
