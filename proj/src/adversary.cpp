// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0

#include "ramer/adversary.hpp"

#include "ramer/errors.hpp"

namespace ramer {

Adversary::Adversary(ParameterStore& store, Eigen::Index width, int zeta, nn::Rng& rng) {
  for (Modality m : kCoreModalities)
    f_[static_cast<std::size_t>(core_index(m))] =
        nn::Mlp(store, "adv.spec." + std::string(modality_name(m)), {width, width, width}, rng);
  g_ = nn::Mlp(store, "adv.generator", {width, width, width}, rng);
  d_ = nn::Mlp(store, "adv.discriminator", {width, width, 3}, rng);
  cml_ = nn::Linear(store, "adv.common_head", width, zeta, rng);
}

ad::Var Adversary::extract_specificity(ad::Tape& tape, Modality m, ad::Var x) const {
  return specificity_net(m)(tape, x);
}

ad::Var Adversary::generate_commonality(ad::Tape& tape, ad::Var x) const { return g_(tape, x); }

ad::Var Adversary::discriminator_logits(ad::Tape& tape, ad::Var x) const { return d_(tape, x); }

ad::Var Adversary::discriminate(ad::Tape& tape, ad::Var x) const {
  return ad::softmax_rows(discriminator_logits(tape, x));
}

ad::Var Adversary::common_label_probs(ad::Tape& tape, ad::Var c) const { return ad::sigmoid(cml_(tape, c)); }

ad::Var modality_adversarial_loss(const ModalityVars& logits) {
  std::vector<int> target;
  for (int m = 0; m < 3; ++m) target.insert(target.end(), static_cast<std::size_t>(logits[static_cast<std::size_t>(m)].rows()), m);
  return ad::softmax_cross_entropy(ad::concat_rows({logits[0], logits[1], logits[2]}), target);
}

ad::Var common_semantic_loss(const ModalityVars& probs, const Mat& labels) {
  ad::Var total = ad::bce_mean(probs[0], labels);
  for (std::size_t m = 1; m < 3; ++m) total = ad::add(total, ad::bce_mean(probs[m], labels));
  return ad::scale(total, 1.0 / 3.0);
}

ad::Var orthogonality_loss(const ModalityVars& commonality, const ModalityVars& specificity) {
  std::vector<ad::Var> dots;
  for (std::size_t m = 0; m < 3; ++m) dots.push_back(ad::row_dot(commonality[m], specificity[m]));
  return ad::mean_all(ad::square(ad::concat_rows(dots)));
}

ad::Var frobenius_overlap(ad::Var c, ad::Var s) {
  return ad::sum_all(ad::square(ad::matmul(ad::transpose(c), s)));
}

double adversarial_objective(double loss_c, double loss_s, double loss_orth, double loss_cml,
                             const AdversarialWeights& w) {
  return w.lambda_a * (loss_c + loss_s) + w.lambda_o * loss_orth + w.lambda_c * loss_cml;
}

ad::Var adversarial_objective(ad::Var loss_c, ad::Var loss_s, ad::Var loss_orth, ad::Var loss_cml,
                              const AdversarialWeights& w) {
  return ad::add(ad::add(ad::scale(ad::add(loss_c, loss_s), w.lambda_a), ad::scale(loss_orth, w.lambda_o)),
                 ad::scale(loss_cml, w.lambda_c));
}

}  // namespace ramer
