// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0

#include "ramer/reconstructor.hpp"

#include "ramer/errors.hpp"

namespace ramer {

Reconstructor::Reconstructor(ParameterStore& store, const ReconConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
  const Eigen::Index d = cfg_.width, dz = cfg_.latent;
  for (Modality m : kCoreModalities) {
    const auto i = static_cast<std::size_t>(core_index(m));
    const std::string name = "recon." + std::string(modality_name(m));
    std::vector<Eigen::Index> ew{d}, dw{dz};
    for (auto h : cfg_.latent_hidden) ew.push_back(h);
    ew.push_back(dz);
    for (auto it = cfg_.latent_hidden.rbegin(); it != cfg_.latent_hidden.rend(); ++it) dw.push_back(*it);
    dw.push_back(d);
    enc_[i] = nn::Mlp(store, name + ".encoder", ew, rng);
    dec_[i] = nn::Mlp(store, name + ".decoder", dw, rng);
    g1_[i] = nn::Mlp(store, name + ".level1", {dz + 2 * d, d, d}, rng);
    g2_[i] = nn::Mlp(store, name + ".level2", {d, d, d}, rng);
  }
  const char* names[] = {"alpha", "beta", "gamma"};
  for (std::size_t s = 0; s < 3; ++s)
    heads_[s] = nn::Linear(store, std::string("recon.head.") + names[s], d, cfg_.zeta, rng);
}

ad::Var Reconstructor::encode_latent(ad::Tape& tape, Modality m, ad::Var x) const { return encoder(m)(tape, x); }

ad::Var Reconstructor::decode(ad::Tape& tape, Modality m, ad::Var z) const { return decoder(m)(tape, z); }

ad::Var Reconstructor::reconstruct_level1(ad::Tape& tape, Modality m, ad::Var intrinsic,
                                          const ModalityVars& decoded) const {
  if (!intrinsic.valid()) throw DataError("level-1 reconstruction needs the intrinsic vector");
  std::vector<ad::Var> parts;
  for (Modality o : cfg_.fusion.order) {
    if (o == m) continue;
    const auto& v = decoded[static_cast<std::size_t>(core_index(o))];
    if (!v.valid()) throw DataError("level-1 reconstruction needs decoded features of every other modality");
    parts.push_back(v);
  }
  if (cfg_.fusion.intrinsic_last)
    parts.push_back(intrinsic);
  else
    parts.insert(parts.begin(), intrinsic);
  return level1(m)(tape, ad::concat_cols(parts));
}

ad::Var Reconstructor::reconstruct_level2(ad::Tape& tape, Modality m, ad::Var beta) const {
  return level2(m)(tape, beta);
}

ad::Var Reconstructor::space_probs(ad::Tape& tape, Space s, const ModalityVars& features) const {
  std::vector<ad::Var> logits;
  for (const auto& f : features)
    if (f.valid()) logits.push_back(head(s)(tape, f));
  if (logits.empty()) throw DataError("space_probs: no features for this space");
  return ad::sigmoid(logits.size() == 1 ? logits.front() : ad::elementwise_max(logits));
}

ad::Var reconstruction_loss(const ModalityVars& target, const ModalityVars& decoded, const ModalityVars& beta,
                            const Mat& include) {
  ad::Tape* tape = target[0].tape;
  const Eigen::Index n = target[0].rows();
  if (include.rows() != n || include.cols() != 3) throw DataError("reconstruction_loss: include mask shape");
  std::vector<ad::Var> terms;
  for (std::size_t m = 0; m < 3; ++m) {
    ad::Var mask = tape->constant(include.col(static_cast<Eigen::Index>(m)));
    if (decoded[m].valid()) terms.push_back(ad::hadamard(ad::row_norm(ad::sub(target[m], decoded[m])), mask));
    if (beta[m].valid()) terms.push_back(ad::hadamard(ad::row_norm(ad::sub(target[m], beta[m])), mask));
  }
  if (terms.empty() || n == 0) return tape->constant(Mat::Zero(1, 1));
  return ad::scale(ad::sum_all(ad::concat_rows(terms)), 1.0 / static_cast<double>(n));
}

ThreeSpaceOutput classify_three_spaces(ad::Tape& tape, const Reconstructor& rec,
                                       const std::array<ModalityVars, 3>& spaces, const Mat& labels,
                                       const SpaceWeights& w) {
  ThreeSpaceOutput out;
  const double lambdas[3] = {w.alpha, w.beta, w.gamma};
  ad::Var total = tape.constant(Mat::Zero(1, 1));
  for (std::size_t s = 0; s < 3; ++s) {
    bool any = false;
    for (const auto& v : spaces[s]) any = any || v.valid();
    if (!any) continue;
    out.probs[s] = rec.space_probs(tape, static_cast<Space>(s), spaces[s]);
    out.bce[s] = ad::bce_mean(out.probs[s], labels);
    total = ad::add(total, ad::scale(out.bce[s], lambdas[s]));
  }
  out.loss = total;
  return out;
}

}  // namespace ramer
