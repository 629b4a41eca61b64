#include "gtseg/segmodel.hpp"

#include <stdexcept>
#include <string>
#include <unordered_map>

namespace gtseg {

void SegModelConfig::validate() const {
  if (in_channels < 1 || num_classes < 2)
    throw std::invalid_argument("SegModelConfig: need at least one input channel and two classes");
  if (output_stride != 8)
    throw std::invalid_argument("SegModelConfig: output_stride is fixed at 8");
  if (encoder_channels.size() != 3)
    throw std::invalid_argument("SegModelConfig: exactly three encoder stages are required for output stride 8");
  for (int c : encoder_channels)
    if (c < 1 || c % norm_group_size != 0)
      throw std::invalid_argument("SegModelConfig: encoder channels must be positive multiples of norm_group_size");
}

SegModel::SegModel(SegModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  auto unit = [&](std::string name, int cin, int cout, int stride) {
    ConvUnit u;
    u.name = std::move(name);
    u.weight = make_param(kaiming_normal(Shape{cout, cin, 3, 3}, cin * 9, rng));
    u.bias = make_param(Tensor(Shape{cout}));
    u.gamma = make_param(Tensor(Shape{cout}, 1.0));
    u.beta = make_param(Tensor(Shape{cout}));
    u.stride = stride;
    return u;
  };
  int cin = config_.in_channels;
  for (std::size_t i = 0; i < config_.encoder_channels.size(); ++i) {
    const int cout = config_.encoder_channels[i];
    encoder_.push_back(unit("encoder/stage" + std::to_string(i + 1), cin, cout, 2));
    cin = cout;
  }
  if (config_.context_conv)
    encoder_.push_back(unit("encoder/context", cin, cin, 1));

  Tensor w(Shape{config_.num_classes, cin, 1, 1});
  for (double &v : w.values())
    v = rng.normal(0.0, 0.01);
  classifier_weight_ = make_param(std::move(w));
  classifier_bias_ = make_param(Tensor(Shape{config_.num_classes}));
}

ag::Var SegModel::apply(const ConvUnit &unit, const ag::Var &x) const {
  ag::Var h = ops::conv2d(x, unit.weight, unit.bias, unit.stride, 1);
  h = ops::group_norm(h, unit.gamma, unit.beta, unit.gamma.value().numel() / config_.norm_group_size);
  return ops::relu(h);
}

ag::Var SegModel::encode(const ag::Var &images) {
  const Shape &s = images.shape();
  if (s.size() != 4 || s[1] != config_.in_channels)
    throw std::invalid_argument("encode: expected [N, " + std::to_string(config_.in_channels) + ", H, W], got " +
                                shape_str(s));
  if (s[2] % config_.output_stride != 0 || s[3] % config_.output_stride != 0)
    throw std::invalid_argument("encode: spatial size " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                                " is not divisible by the output stride " + std::to_string(config_.output_stride));
  ++encode_calls_;
  ag::Var h = images;
  for (const ConvUnit &u : encoder_)
    h = apply(u, h);
  return h;
}

ag::Var SegModel::decode(const ag::Var &features) const {
  const Shape &s = features.shape();
  if (s.size() != 4 || s[1] != config_.feature_dim())
    throw std::invalid_argument("decode: expected [N, " + std::to_string(config_.feature_dim()) + ", h, w], got " +
                                shape_str(s));
  ag::Var logits = ops::conv2d(features, classifier_weight_, classifier_bias_, 1, 0);
  return ops::upsample_bilinear(logits, config_.output_stride);
}

ParamGroups SegModel::parameter_groups() const {
  ParamGroups g;
  for (const ConvUnit &u : encoder_) {
    g.encoder.push_back({u.name + "/conv.weight", u.weight});
    g.encoder.push_back({u.name + "/conv.bias", u.bias});
    g.encoder.push_back({u.name + "/norm.weight", u.gamma});
    g.encoder.push_back({u.name + "/norm.bias", u.beta});
  }
  g.decoder.push_back({"decoder/classifier.weight", classifier_weight_});
  g.decoder.push_back({"decoder/classifier.bias", classifier_bias_});
  return g;
}

ParamList SegModel::parameters() const {
  ParamGroups g = parameter_groups();
  ParamList all = std::move(g.encoder);
  all.insert(all.end(), g.decoder.begin(), g.decoder.end());
  return all;
}

void copy_parameters(const ParamList &from, const ParamList &to) {
  if (from.size() != to.size())
    throw std::invalid_argument("copy_parameters: parameter count mismatch");
  std::unordered_map<std::string, const ag::Var *> index;
  for (const auto &p : from)
    index[p.name] = &p.var;
  for (const auto &p : to) {
    auto it = index.find(p.name);
    if (it == index.end())
      throw std::invalid_argument("copy_parameters: missing parameter " + p.name);
    if (!it->second->value().same_shape(p.var.value()))
      throw std::invalid_argument("copy_parameters: shape mismatch for " + p.name);
    ag::Var dst = p.var;
    dst.mutable_value() = it->second->value();
  }
}

} // namespace gtseg
