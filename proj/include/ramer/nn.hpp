// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ramer/autodiff.hpp"

#include <random>
#include <string>
#include <vector>

namespace ramer::nn {

using Rng = std::mt19937_64;

/// Glorot-uniform matrix.
Mat glorot(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng);

/// Affine map x W + b with W: in x out, b: 1 x out.
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng);

  ad::Var operator()(ad::Tape& tape, ad::Var x) const;

  Parameter& weight() const { return *weight_; }
  Parameter& bias() const { return *bias_; }
  Eigen::Index in() const { return weight_->value.rows(); }
  Eigen::Index out() const { return weight_->value.cols(); }

 private:
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
};

/// Stack of Linear layers with tanh between consecutive layers.
class Mlp {
 public:
  Mlp() = default;
  /// widths = {in, hidden..., out}; widths.size() >= 2.
  Mlp(ParameterStore& store, const std::string& name, const std::vector<Eigen::Index>& widths, Rng& rng);

  ad::Var operator()(ad::Tape& tape, ad::Var x) const;

  const std::vector<Linear>& layers() const { return layers_; }
  std::vector<Parameter*> parameters() const;

 private:
  std::vector<Linear> layers_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, Eigen::Index width);
  ad::Var operator()(ad::Tape& tape, ad::Var x) const;

 private:
  Parameter* gain_ = nullptr;
  Parameter* bias_ = nullptr;
};

/// Residual grouped self-attention: x + Attn(x Wq, x Wk, x Wv) Wo.
class AttentionBlock {
 public:
  AttentionBlock() = default;
  AttentionBlock(ParameterStore& store, const std::string& name, Eigen::Index width, int heads, Rng& rng);

  ad::Var operator()(ad::Tape& tape, ad::Var x, const std::vector<std::vector<int>>& groups,
                     const std::vector<std::uint8_t>& key_mask) const;
  /// The attention branch without the residual connection.
  ad::Var branch(ad::Tape& tape, ad::Var x, const std::vector<std::vector<int>>& groups,
                 const std::vector<std::uint8_t>& key_mask) const;

  const Linear& query() const { return q_; }
  const Linear& key() const { return k_; }
  const Linear& value() const { return v_; }
  const Linear& output() const { return o_; }
  int heads() const { return heads_; }

 private:
  Linear q_, k_, v_, o_;
  int heads_ = 1;
};

/// Post-norm transformer encoder layer over row groups.
class TransformerLayer {
 public:
  TransformerLayer() = default;
  TransformerLayer(ParameterStore& store, const std::string& name, Eigen::Index width, int heads, Rng& rng);

  /// `dropout_mask` (same shape as x, entries 0 or 1/(1-p)) is applied to the
  /// attention and feed-forward branches when non-empty.
  ad::Var operator()(ad::Tape& tape, ad::Var x, const std::vector<std::vector<int>>& groups,
                     const std::vector<std::uint8_t>& key_mask, const Mat& dropout_attn,
                     const Mat& dropout_ffn) const;

 private:
  AttentionBlock attn_;
  LayerNorm norm1_, norm2_;
  Linear ff1_, ff2_;
};

}  // namespace ramer::nn
