#pragma once

#include <cstdint>
#include <span>

#include "gtseg/autograd.hpp"

// Differentiable tensor ops. Every op records its own backward closure on the
// tape; shapes are validated eagerly and reported with std::invalid_argument.
namespace gtseg::ops {

using ag::Var;

inline constexpr std::uint8_t kIgnoreLabel = 255;

Var add(const Var &a, const Var &b);
// Adds a constant whose shape matches the trailing dimensions of a.
Var add_constant(const Var &a, const Tensor &c);
Var scale(const Var &a, double s);

Var relu(const Var &x);
Var gelu(const Var &x);

// x [N, Ci, H, W], weight [Co, Ci, k, k], bias [Co] (may be undefined).
Var conv2d(const Var &x, const Var &weight, const Var &bias, int stride, int padding);

// Per-sample normalization over channel groups; gamma/beta [C].
Var group_norm(const Var &x, const Var &gamma, const Var &beta, int groups, double eps = 1e-5);

// Integer-factor bilinear upsampling with half-pixel centers (align_corners=false).
Var upsample_bilinear(const Var &x, int factor);

// x [..., Din], weight [Dout, Din], bias [Dout] (may be undefined).
Var linear(const Var &x, const Var &weight, const Var &bias);
Var layer_norm(const Var &x, const Var &gamma, const Var &beta, double eps = 1e-6);

// Multi-head scaled dot-product self-attention. qkv [N, T, 3E] packs the
// query, key and value projections; returns [N, T, E].
Var attention(const Var &qkv, int heads);

// [N, C, H, W] -> [N, (H/p)(W/p), p*p*C]; tokens in raster order, each token
// flattened as (c, py, px).
Var patchify(const Var &x, int patch);
// Exact inverse of patchify.
Var unpatchify(const Var &x, int patch, int channels, int height, int width);

// out = M * token + (1 - M) * features, where M [N, h, w] is binary and the
// token [C] is broadcast over masked positions.
Var mask_token_fill(const Var &features, std::span<const std::uint8_t> mask, const Var &token);

// Mean over non-ignored pixels of weight * (-log softmax(logits)[label]).
// logits [N, C, H, W]; labels and weights are N*H*W in NHW order; weights may
// be empty (all ones). Throws when every pixel is ignored.
Var softmax_cross_entropy(const Var &logits, std::span<const std::uint8_t> labels,
                          std::span<const double> weights = {});

} // namespace gtseg::ops
