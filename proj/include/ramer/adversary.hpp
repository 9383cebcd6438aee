// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0
//
// Specificity extractors, the shared commonality generator, the modality
// discriminator and the adversarial loss terms.

#pragma once

#include "ramer/autodiff.hpp"
#include "ramer/corpus.hpp"
#include "ramer/nn.hpp"

#include <array>

namespace ramer {

using ModalityVars = std::array<ad::Var, 3>;

/// Per-modality specificity S^m and commonality C^m, rows = samples.
struct SpecCommon {
  ModalityVars specificity;
  ModalityVars commonality;
};

class Adversary {
 public:
  Adversary(ParameterStore& store, Eigen::Index width, int zeta, nn::Rng& rng);

  /// f_m: private two-layer stack for modality m.
  ad::Var extract_specificity(ad::Tape& tape, Modality m, ad::Var x) const;
  /// G: one generator shared by every modality.
  ad::Var generate_commonality(ad::Tape& tape, ad::Var x) const;
  /// D logits over (visual, textual, acoustic).
  ad::Var discriminator_logits(ad::Tape& tape, ad::Var x) const;
  /// Softmax of the discriminator logits.
  ad::Var discriminate(ad::Tape& tape, ad::Var x) const;
  /// Shared linear + sigmoid label head applied to commonality vectors.
  ad::Var common_label_probs(ad::Tape& tape, ad::Var c) const;

  const nn::Mlp& specificity_net(Modality m) const { return f_[static_cast<std::size_t>(core_index(m))]; }
  const nn::Mlp& generator() const { return g_; }
  const nn::Mlp& discriminator() const { return d_; }
  const nn::Linear& common_head() const { return cml_; }

 private:
  std::array<nn::Mlp, 3> f_;
  nn::Mlp g_;
  nn::Mlp d_;
  nn::Linear cml_;
};

/// Cross-entropy of the discriminator against the source modality, averaged
/// over samples and modalities. `logits[m]` holds D's logits for inputs that
/// came from modality m. Used for both L_C and L_S.
ad::Var modality_adversarial_loss(const ModalityVars& logits);

/// Label-summed BCE of per-modality commonality predictions, averaged over
/// samples and modalities.
ad::Var common_semantic_loss(const ModalityVars& probs, const Mat& labels);

/// Mean over samples and modalities of (C . S)^2 for pooled vectors.
ad::Var orthogonality_loss(const ModalityVars& commonality, const ModalityVars& specificity);

/// ||C^T S||_F^2 for sequence-level (l x d) matrices.
ad::Var frobenius_overlap(ad::Var c, ad::Var s);

struct AdversarialWeights {
  double lambda_a = 1.0;
  double lambda_o = 0.1;
  double lambda_c = 1.0;
};

/// lambda_a (L_C + L_S) + lambda_o L_orth + lambda_c L_cml.
double adversarial_objective(double loss_c, double loss_s, double loss_orth, double loss_cml,
                             const AdversarialWeights& w);
ad::Var adversarial_objective(ad::Var loss_c, ad::Var loss_s, ad::Var loss_orth, ad::Var loss_cml,
                              const AdversarialWeights& w);

}  // namespace ramer
