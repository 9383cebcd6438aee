// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0
//
// Supervised contrastive network: moving-average label-polarity prototypes,
// polarity attention producing the intrinsic vector, and the SupCon loss.

#pragma once

#include "ramer/autodiff.hpp"
#include "ramer/corpus.hpp"
#include "ramer/nn.hpp"

#include <array>
#include <vector>

namespace ramer {

enum class Polarity : int { Pos = 0, Neg = 1 };

class PrototypeBank {
 public:
  PrototypeBank() = default;
  PrototypeBank(int zeta, Eigen::Index dim, double momentum);

  /// Moving-average update from L2-normalized embeddings of modality m.
  /// Cells with no members in the batch are left untouched.
  void update(Modality m, const Mat& embeddings, const Mat& labels);

  RowVec prototype(Modality m, int label, Polarity k) const;
  void set_prototype(Modality m, int label, Polarity k, const RowVec& v);
  bool initialized(Modality m, int label, Polarity k) const;
  bool complete(Modality m) const;

  int zeta() const { return zeta_; }
  Eigen::Index dim() const { return dim_; }
  double momentum() const { return momentum_; }
  /// Rows ordered (label, polarity): row 2*j + k.
  const Mat& table(Modality m) const { return mu_[static_cast<std::size_t>(core_index(m))]; }
  const std::vector<std::uint8_t>& init_flags(Modality m) const {
    return init_[static_cast<std::size_t>(core_index(m))];
  }
  void restore(Modality m, Mat table, std::vector<std::uint8_t> flags);

  bool operator==(const PrototypeBank& o) const;

 private:
  int zeta_ = 0;
  Eigen::Index dim_ = 0;
  double momentum_ = 0.9;
  std::array<Mat, 3> mu_;
  std::array<std::vector<std::uint8_t>, 3> init_;
};

struct PolarityAttention {
  Mat weights;  // zeta x 2: (o_pos, o_neg)
  Mat delta;    // zeta x dim
};

/// o_{j,k} = softmax_k(z . mu_{j,k}); delta_j = sum_k o_{j,k} mu_{j,k}.
/// Throws DataError when a needed cell is uninitialized.
PolarityAttention attend_polarity(const RowVec& z, const PrototypeBank& bank, Modality m);

/// Differentiable batch version: rows of `z` -> concat(delta_1 .. delta_zeta).
ad::Var attend_polarity(ad::Tape& tape, ad::Var z, const PrototypeBank& bank, Modality m);

/// Per-modality projection of the concatenated deltas to the latent width.
class IntrinsicHead {
 public:
  IntrinsicHead() = default;
  IntrinsicHead(ParameterStore& store, int zeta, Eigen::Index bank_dim, Eigen::Index latent, nn::Rng& rng);

  ad::Var operator()(ad::Tape& tape, Modality m, ad::Var deltas) const;
  const nn::Linear& projection(Modality m) const { return proj_[static_cast<std::size_t>(core_index(m))]; }

 private:
  std::array<nn::Linear, 3> proj_;
};

enum class PositiveRule { ShareAny, ExactMatch };

/// Supervised contrastive loss over L2-normalized rows of `z`; `labels` holds the
/// multi-hot label of each row's source sample. Anchors without positives are
/// skipped; the result is averaged over contributing anchors.
ad::Var supcon_loss(ad::Var z, const Mat& labels, double eta, PositiveRule rule = PositiveRule::ShareAny);

/// Positive-set predicate shared by the loss and its tests.
bool is_positive_pair(const Mat& labels, Eigen::Index i, Eigen::Index p, PositiveRule rule);

}  // namespace ramer
