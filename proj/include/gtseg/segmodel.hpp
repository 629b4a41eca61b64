#pragma once

#include <cstdint>
#include <vector>

#include "gtseg/ops.hpp"
#include "gtseg/params.hpp"

namespace gtseg {

struct SegModelConfig {
  int in_channels = 3;
  int num_classes = 6;
  // One stride-2 3x3 conv per entry; exactly three stages (output stride 8).
  std::vector<int> encoder_channels{32, 64, 128};
  int output_stride = 8;
  int norm_group_size = 8; // channels per normalization group
  // Extra stride-1 3x3 conv at the last stage to widen the receptive field.
  bool context_conv = true;

  int feature_dim() const { return encoder_channels.empty() ? 0 : encoder_channels.back(); }
  void validate() const;
};

struct ParamGroups {
  ParamList encoder;
  ParamList decoder;
};

// Encoder E: strided conv stages with group norm + ReLU. Decoder D: 1x1 conv
// classifier followed by bilinear upsampling back to input resolution.
class SegModel {
public:
  SegModel(SegModelConfig config, std::uint64_t seed);

  // images [N, 3, H, W] -> features [N, feature_dim, H/8, W/8].
  ag::Var encode(const ag::Var &images);
  // features [N, feature_dim, h, w] -> logits [N, num_classes, 8h, 8w].
  ag::Var decode(const ag::Var &features) const;
  ag::Var forward(const ag::Var &images) { return decode(encode(images)); }

  ParamGroups parameter_groups() const;
  // Encoder parameters first, then decoder; names are canonical and stable.
  ParamList parameters() const;

  const SegModelConfig &config() const { return config_; }
  // Number of encode() invocations since construction.
  std::size_t encode_calls() const { return encode_calls_; }

private:
  struct ConvUnit {
    std::string name;
    ag::Var weight, bias, gamma, beta;
    int stride = 1;
  };

  ag::Var apply(const ConvUnit &unit, const ag::Var &x) const;

  SegModelConfig config_;
  std::vector<ConvUnit> encoder_;
  ag::Var classifier_weight_, classifier_bias_;
  std::size_t encode_calls_ = 0;
};

// Copies parameter values by matching name; throws on name or shape mismatch.
void copy_parameters(const ParamList &from, const ParamList &to);

} // namespace gtseg
