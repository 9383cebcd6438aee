// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0

#include "ramer/nn.hpp"

#include "ramer/errors.hpp"
#include "ramer/random.hpp"

#include <cmath>

namespace ramer::nn {

Mat glorot(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Mat w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = random::uniform(rng, -a, a);
  return w;
}

Linear::Linear(ParameterStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng) {
  weight_ = &store.add(name + ".weight", glorot(in, out, rng));
  bias_ = &store.add(name + ".bias", Mat::Zero(1, out));
}

ad::Var Linear::operator()(ad::Tape& tape, ad::Var x) const {
  if (x.cols() != in())
    throw DataError(weight_->name + ": expected width " + std::to_string(in()) + ", got " +
                    std::to_string(x.cols()));
  return ad::add_row(ad::matmul(x, tape.param(*weight_)), tape.param(*bias_));
}

Mlp::Mlp(ParameterStore& store, const std::string& name, const std::vector<Eigen::Index>& widths, Rng& rng) {
  if (widths.size() < 2) throw ConfigError(name + ": an MLP needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    layers_.emplace_back(store, name + "." + std::to_string(i), widths[i], widths[i + 1], rng);
}

ad::Var Mlp::operator()(ad::Tape& tape, ad::Var x) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i](tape, x);
    if (i + 1 < layers_.size()) x = ad::tanh(x);
  }
  return x;
}

std::vector<Parameter*> Mlp::parameters() const {
  std::vector<Parameter*> out;
  for (const auto& l : layers_) {
    out.push_back(&l.weight());
    out.push_back(&l.bias());
  }
  return out;
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, Eigen::Index width) {
  gain_ = &store.add(name + ".gain", Mat::Ones(1, width));
  bias_ = &store.add(name + ".bias", Mat::Zero(1, width));
}

ad::Var LayerNorm::operator()(ad::Tape& tape, ad::Var x) const {
  return ad::layer_norm(x, tape.param(*gain_), tape.param(*bias_));
}

AttentionBlock::AttentionBlock(ParameterStore& store, const std::string& name, Eigen::Index width, int heads,
                               Rng& rng)
    : q_(store, name + ".q", width, width, rng),
      k_(store, name + ".k", width, width, rng),
      v_(store, name + ".v", width, width, rng),
      o_(store, name + ".o", width, width, rng),
      heads_(heads) {
  if (heads < 1 || width % heads != 0) throw ConfigError(name + ": width must be divisible by heads");
}

ad::Var AttentionBlock::branch(ad::Tape& tape, ad::Var x, const std::vector<std::vector<int>>& groups,
                               const std::vector<std::uint8_t>& key_mask) const {
  ad::Var att = ad::grouped_attention(q_(tape, x), k_(tape, x), v_(tape, x), groups, key_mask, heads_);
  return o_(tape, att);
}

ad::Var AttentionBlock::operator()(ad::Tape& tape, ad::Var x, const std::vector<std::vector<int>>& groups,
                                   const std::vector<std::uint8_t>& key_mask) const {
  return ad::add(x, branch(tape, x, groups, key_mask));
}

TransformerLayer::TransformerLayer(ParameterStore& store, const std::string& name, Eigen::Index width, int heads,
                                   Rng& rng)
    : attn_(store, name + ".attn", width, heads, rng),
      norm1_(store, name + ".norm1", width),
      norm2_(store, name + ".norm2", width),
      ff1_(store, name + ".ff1", width, 2 * width, rng),
      ff2_(store, name + ".ff2", 2 * width, width, rng) {}

ad::Var TransformerLayer::operator()(ad::Tape& tape, ad::Var x, const std::vector<std::vector<int>>& groups,
                                     const std::vector<std::uint8_t>& key_mask, const Mat& dropout_attn,
                                     const Mat& dropout_ffn) const {
  ad::Var a = attn_.branch(tape, x, groups, key_mask);
  if (dropout_attn.size() > 0) a = ad::hadamard(a, tape.constant(dropout_attn));
  ad::Var h = norm1_(tape, ad::add(x, a));
  ad::Var f = ff2_(tape, ad::relu(ff1_(tape, h)));
  if (dropout_ffn.size() > 0) f = ad::hadamard(f, tape.constant(dropout_ffn));
  return norm2_(tape, ad::add(h, f));
}

}  // namespace ramer::nn
