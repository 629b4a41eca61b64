#include "gtseg/guider.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gtseg {

void GuiderConfig::validate() const {
  if (feature_dim < 1 || embed_dim < 1 || patch_size < 1 || num_heads < 1 || num_blocks < 0)
    throw std::invalid_argument("GuiderConfig: dimensions must be positive");
  if (embed_dim % num_heads != 0)
    throw std::invalid_argument("GuiderConfig: embed_dim " + std::to_string(embed_dim) + " not divisible by " +
                                std::to_string(num_heads) + " heads");
  if (positional_encoding == PositionalEncoding::factorized_2d && embed_dim % 4 != 0)
    throw std::invalid_argument("GuiderConfig: 2-D positional encoding needs embed_dim divisible by 4");
  if (positional_encoding == PositionalEncoding::raster_1d && embed_dim % 2 != 0)
    throw std::invalid_argument("GuiderConfig: positional encoding needs an even embed_dim");
  if (!(mlp_ratio > 0.0))
    throw std::invalid_argument("GuiderConfig: mlp_ratio must be positive");
}

Tensor sinusoidal_positions(int grid_h, int grid_w, int embed_dim, PositionalEncoding kind) {
  const int tokens = grid_h * grid_w;
  Tensor table(Shape{tokens, embed_dim});
  // Fills dims [offset, offset + width) with interleaved sin/cos of pos.
  auto encode = [&](int token, double pos, int offset, int width) {
    for (int i = 0; i < width / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / width);
      table[static_cast<std::size_t>(token) * embed_dim + offset + 2 * i] = std::sin(pos * freq);
      table[static_cast<std::size_t>(token) * embed_dim + offset + 2 * i + 1] = std::cos(pos * freq);
    }
  };
  for (int r = 0; r < grid_h; ++r)
    for (int c = 0; c < grid_w; ++c) {
      const int tok = r * grid_w + c;
      if (kind == PositionalEncoding::factorized_2d) {
        encode(tok, r, 0, embed_dim / 2);
        encode(tok, c, embed_dim / 2, embed_dim / 2);
      } else {
        encode(tok, tok, 0, embed_dim);
      }
    }
  return table;
}

Guider::Guider(GuiderConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const int c = config_.feature_dim, e = config_.embed_dim;
  const int patch_dim = config_.patch_size * config_.patch_size * c;
  const int hidden = static_cast<int>(std::lround(config_.mlp_ratio * e));

  token_ = make_param(truncated_normal(Shape{c}, 0.02, rng));
  auto projection = [&](bool zero) {
    return zero ? Tensor(Shape{c, c, 1, 1}) : kaiming_normal(Shape{c, c, 1, 1}, c, rng);
  };
  z1_w_ = make_param(projection(config_.zero_init_input));
  z1_b_ = make_param(Tensor(Shape{c}));
  z2_w_ = make_param(projection(config_.zero_init_output));
  z2_b_ = make_param(Tensor(Shape{c}));

  embed_w_ = make_param(truncated_normal(Shape{e, patch_dim}, 0.02, rng));
  embed_b_ = make_param(Tensor(Shape{e}));
  for (int i = 0; i < config_.num_blocks; ++i) {
    Block b;
    b.norm1_w = make_param(Tensor(Shape{e}, 1.0));
    b.norm1_b = make_param(Tensor(Shape{e}));
    b.qkv_w = make_param(truncated_normal(Shape{3 * e, e}, 0.02, rng));
    b.qkv_b = make_param(Tensor(Shape{3 * e}));
    b.proj_w = make_param(truncated_normal(Shape{e, e}, 0.02, rng));
    b.proj_b = make_param(Tensor(Shape{e}));
    b.norm2_w = make_param(Tensor(Shape{e}, 1.0));
    b.norm2_b = make_param(Tensor(Shape{e}));
    b.fc1_w = make_param(truncated_normal(Shape{hidden, e}, 0.02, rng));
    b.fc1_b = make_param(Tensor(Shape{hidden}));
    b.fc2_w = make_param(truncated_normal(Shape{e, hidden}, 0.02, rng));
    b.fc2_b = make_param(Tensor(Shape{e}));
    blocks_.push_back(std::move(b));
  }
  out_w_ = make_param(truncated_normal(Shape{patch_dim, e}, 0.02, rng));
  out_b_ = make_param(Tensor(Shape{patch_dim}));
}

void Guider::check_features(const ag::Var &f) const {
  const Shape &s = f.shape();
  if (s.size() != 4 || s[1] != config_.feature_dim)
    throw std::invalid_argument("Guider: expected features [N, " + std::to_string(config_.feature_dim) +
                                ", h, w], got " + shape_str(s));
  if (s[2] % config_.patch_size != 0 || s[3] % config_.patch_size != 0)
    throw std::invalid_argument("Guider: feature size " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                                " not divisible by patch size " + std::to_string(config_.patch_size));
}

ag::Var Guider::init_features(const ag::Var &mixed_features, std::span<const std::uint8_t> mask_scale) const {
  check_features(mixed_features);
  return ops::mask_token_fill(mixed_features, mask_scale, token_);
}

ag::Var Guider::gia_forward(const ag::Var &initial) const {
  check_features(initial);
  const int c = initial.dim(1), h = initial.dim(2), w = initial.dim(3);
  const int p = config_.patch_size;

  ag::Var x = ops::conv2d(initial, z1_w_, z1_b_, 1, 0);
  x = ops::linear(ops::patchify(x, p), embed_w_, embed_b_);
  x = ops::add_constant(x, sinusoidal_positions(h / p, w / p, config_.embed_dim, config_.positional_encoding));
  for (const Block &b : blocks_) {
    ag::Var a = ops::layer_norm(x, b.norm1_w, b.norm1_b);
    a = ops::linear(ops::attention(ops::linear(a, b.qkv_w, b.qkv_b), config_.num_heads), b.proj_w, b.proj_b);
    x = ops::add(x, a);
    ag::Var m = ops::layer_norm(x, b.norm2_w, b.norm2_b);
    m = ops::linear(ops::gelu(ops::linear(m, b.fc1_w, b.fc1_b)), b.fc2_w, b.fc2_b);
    x = ops::add(x, m);
  }
  x = ops::unpatchify(ops::linear(x, out_w_, out_b_), p, c, h, w);
  return ops::conv2d(x, z2_w_, z2_b_, 1, 0);
}

ag::Var Guider::reconstruct(const ag::Var &mixed_features, std::span<const std::uint8_t> mask_scale) const {
  const ag::Var initial = init_features(mixed_features, mask_scale);
  const ag::Var offset = gia_forward(initial);
  return config_.skip_connection ? ops::add(offset, initial) : offset;
}

ParamList Guider::parameters() const {
  ParamList out{{"guider/token", token_},         {"guider/z1.weight", z1_w_},    {"guider/z1.bias", z1_b_},
                {"guider/embed.weight", embed_w_}, {"guider/embed.bias", embed_b_}};
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block &b = blocks_[i];
    const std::string pre = "guider/blocks." + std::to_string(i) + ".";
    out.push_back({pre + "norm1.weight", b.norm1_w});
    out.push_back({pre + "norm1.bias", b.norm1_b});
    out.push_back({pre + "attn.qkv.weight", b.qkv_w});
    out.push_back({pre + "attn.qkv.bias", b.qkv_b});
    out.push_back({pre + "attn.proj.weight", b.proj_w});
    out.push_back({pre + "attn.proj.bias", b.proj_b});
    out.push_back({pre + "norm2.weight", b.norm2_w});
    out.push_back({pre + "norm2.bias", b.norm2_b});
    out.push_back({pre + "mlp.fc1.weight", b.fc1_w});
    out.push_back({pre + "mlp.fc1.bias", b.fc1_b});
    out.push_back({pre + "mlp.fc2.weight", b.fc2_w});
    out.push_back({pre + "mlp.fc2.bias", b.fc2_b});
  }
  out.push_back({"guider/head.weight", out_w_});
  out.push_back({"guider/head.bias", out_b_});
  out.push_back({"guider/z2.weight", z2_w_});
  out.push_back({"guider/z2.bias", z2_b_});
  return out;
}

} // namespace gtseg
