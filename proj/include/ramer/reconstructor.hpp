// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0
//
// Modality encoders/decoders and the two-level cross-modal reconstruction
// network, with the reconstruction loss and the three-space classifier.

#pragma once

#include "ramer/adversary.hpp"
#include "ramer/autodiff.hpp"
#include "ramer/corpus.hpp"
#include "ramer/nn.hpp"

#include <array>
#include <optional>

namespace ramer {

/// Order of modality blocks where modalities are fused. The intrinsic vector
/// goes first unless `intrinsic_last` is set.
struct FusionOrder {
  std::array<Modality, 3> order = {Modality::Visual, Modality::Textual, Modality::Acoustic};
  bool intrinsic_last = false;
};

struct ReconConfig {
  Eigen::Index width = 16;
  Eigen::Index latent = 8;
  int zeta = 6;
  /// Hidden widths of the encoder and decoder MLPs; empty means a single affine map.
  std::vector<Eigen::Index> latent_hidden;
  FusionOrder fusion;
};

struct ReconState {
  ModalityVars latent;   // Z_alpha
  ModalityVars decoded;  // X~_alpha
  ModalityVars beta;     // X_beta (invalid when level 1 is disabled)
  ModalityVars gamma;    // X_gamma (invalid when level 2 is disabled)
};

enum class Space { Alpha = 0, Beta = 1, Gamma = 2 };

struct ThreeSpaceOutput {
  std::array<ad::Var, 3> probs;  // per space, samples x zeta; invalid when the space is off
  std::array<ad::Var, 3> bce;    // per space BCE (1x1)
  ad::Var loss;
};

struct SpaceWeights {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
};

class Reconstructor {
 public:
  Reconstructor(ParameterStore& store, const ReconConfig& cfg, nn::Rng& rng);

  ad::Var encode_latent(ad::Tape& tape, Modality m, ad::Var x) const;
  ad::Var decode(ad::Tape& tape, Modality m, ad::Var z) const;
  /// g over concat(D~^m, X~ of the other two modalities) in fusion order.
  ad::Var reconstruct_level1(ad::Tape& tape, Modality m, ad::Var intrinsic, const ModalityVars& decoded) const;
  ad::Var reconstruct_level2(ad::Tape& tape, Modality m, ad::Var beta) const;
  /// Head for space s applied to each modality, logits max-pooled across
  /// modalities, then sigmoid. Null entries in `features` are skipped.
  ad::Var space_probs(ad::Tape& tape, Space s, const ModalityVars& features) const;

  const ReconConfig& config() const { return cfg_; }
  const nn::Mlp& encoder(Modality m) const { return enc_[static_cast<std::size_t>(core_index(m))]; }
  const nn::Mlp& decoder(Modality m) const { return dec_[static_cast<std::size_t>(core_index(m))]; }
  const nn::Mlp& level1(Modality m) const { return g1_[static_cast<std::size_t>(core_index(m))]; }
  const nn::Mlp& level2(Modality m) const { return g2_[static_cast<std::size_t>(core_index(m))]; }
  const nn::Linear& head(Space s) const { return heads_[static_cast<std::size_t>(s)]; }

 private:
  ReconConfig cfg_;
  std::array<nn::Mlp, 3> enc_, dec_, g1_, g2_;
  std::array<nn::Linear, 3> heads_;
};

/// Mean over samples of sum_m include(b, m) * (||target - decoded|| + ||target - beta||).
/// `beta` entries may be invalid (term skipped). `include` is samples x 3.
ad::Var reconstruction_loss(const ModalityVars& target, const ModalityVars& decoded, const ModalityVars& beta,
                            const Mat& include);

/// lambda-weighted sum of per-space BCE; spaces whose features are null are skipped.
ThreeSpaceOutput classify_three_spaces(ad::Tape& tape, const Reconstructor& rec,
                                       const std::array<ModalityVars, 3>& spaces, const Mat& labels,
                                       const SpaceWeights& w);

}  // namespace ramer
