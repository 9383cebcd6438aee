// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0

#include "ramer/prototypes.hpp"

#include "ramer/errors.hpp"

#include <cmath>
#include <limits>

namespace ramer {

PrototypeBank::PrototypeBank(int zeta, Eigen::Index dim, double momentum)
    : zeta_(zeta), dim_(dim), momentum_(momentum) {
  if (zeta < 1 || dim < 1) throw ConfigError("prototype bank: zeta and dim must be >= 1");
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ConfigError("prototype bank: momentum must lie in [0, 1]");
  for (std::size_t m = 0; m < 3; ++m) {
    mu_[m] = Mat::Zero(2 * zeta, dim);
    init_[m].assign(static_cast<std::size_t>(2 * zeta), 0);
  }
}

void PrototypeBank::update(Modality m, const Mat& embeddings, const Mat& labels) {
  if (embeddings.cols() != dim_) throw DataError("prototype update: embedding width mismatch");
  if (labels.rows() != embeddings.rows() || labels.cols() != zeta_)
    throw DataError("prototype update: label shape mismatch");
  const auto mi = static_cast<std::size_t>(core_index(m));
  for (int j = 0; j < zeta_; ++j) {
    RowVec sum[2] = {RowVec::Zero(dim_), RowVec::Zero(dim_)};
    int count[2] = {0, 0};
    for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
      const int k = labels(i, j) > 0.5 ? 0 : 1;
      sum[k] += embeddings.row(i);
      ++count[k];
    }
    for (int k = 0; k < 2; ++k) {
      if (count[k] == 0) continue;
      const RowVec mean = sum[k] / static_cast<double>(count[k]);
      const auto row = static_cast<Eigen::Index>(2 * j + k);
      RowVec next = init_[mi][static_cast<std::size_t>(row)] ? RowVec(momentum_ * mu_[mi].row(row) + (1.0 - momentum_) * mean)
                                                              : mean;
      const double n = next.norm();
      if (n > 0.0) next /= n;
      if (!next.allFinite()) throw NumericError("prototype update produced a non-finite vector");
      mu_[mi].row(row) = next;
      init_[mi][static_cast<std::size_t>(row)] = 1;
    }
  }
}

RowVec PrototypeBank::prototype(Modality m, int label, Polarity k) const {
  return mu_[static_cast<std::size_t>(core_index(m))].row(2 * label + static_cast<int>(k));
}

void PrototypeBank::set_prototype(Modality m, int label, Polarity k, const RowVec& v) {
  const auto mi = static_cast<std::size_t>(core_index(m));
  const int row = 2 * label + static_cast<int>(k);
  mu_[mi].row(row) = v;
  init_[mi][static_cast<std::size_t>(row)] = 1;
}

bool PrototypeBank::initialized(Modality m, int label, Polarity k) const {
  return init_[static_cast<std::size_t>(core_index(m))][static_cast<std::size_t>(2 * label + static_cast<int>(k))] != 0;
}

bool PrototypeBank::complete(Modality m) const {
  for (auto f : init_[static_cast<std::size_t>(core_index(m))])
    if (!f) return false;
  return true;
}

void PrototypeBank::restore(Modality m, Mat table, std::vector<std::uint8_t> flags) {
  if (table.rows() != 2 * zeta_ || table.cols() != dim_ || flags.size() != static_cast<std::size_t>(2 * zeta_))
    throw DataError("prototype bank: restored table shape mismatch");
  mu_[static_cast<std::size_t>(core_index(m))] = std::move(table);
  init_[static_cast<std::size_t>(core_index(m))] = std::move(flags);
}

bool PrototypeBank::operator==(const PrototypeBank& o) const {
  if (zeta_ != o.zeta_ || dim_ != o.dim_ || momentum_ != o.momentum_) return false;
  for (std::size_t m = 0; m < 3; ++m)
    if (mu_[m] != o.mu_[m] || init_[m] != o.init_[m]) return false;
  return true;
}

PolarityAttention attend_polarity(const RowVec& z, const PrototypeBank& bank, Modality m) {
  if (!bank.complete(m))
    throw DataError("polarity attention: prototype bank for " + std::string(modality_name(m)) + " is not initialized");
  PolarityAttention out;
  out.weights.resize(bank.zeta(), 2);
  out.delta.resize(bank.zeta(), bank.dim());
  for (int j = 0; j < bank.zeta(); ++j) {
    const RowVec up = bank.prototype(m, j, Polarity::Pos);
    const RowVec un = bank.prototype(m, j, Polarity::Neg);
    const double lp = z.dot(up), ln = z.dot(un);
    const double mx = std::max(lp, ln);
    const double ep = std::exp(lp - mx), en = std::exp(ln - mx);
    out.weights(j, 0) = ep / (ep + en);
    out.weights(j, 1) = en / (ep + en);
    out.delta.row(j) = out.weights(j, 0) * up + out.weights(j, 1) * un;
  }
  return out;
}

ad::Var attend_polarity(ad::Tape& tape, ad::Var z, const PrototypeBank& bank, Modality m) {
  if (!bank.complete(m))
    throw DataError("polarity attention: prototype bank for " + std::string(modality_name(m)) + " is not initialized");
  if (z.cols() != bank.dim()) throw DataError("polarity attention: embedding width mismatch");
  const int zeta = bank.zeta();
  const Eigen::Index dim = bank.dim();
  const Eigen::Index n = z.rows();
  Mat pos(dim, zeta), neg(dim, zeta), expand = Mat::Zero(zeta, zeta * dim);
  RowVec neg_flat(zeta * dim), diff_flat(zeta * dim);
  for (int j = 0; j < zeta; ++j) {
    const RowVec up = bank.prototype(m, j, Polarity::Pos);
    const RowVec un = bank.prototype(m, j, Polarity::Neg);
    pos.col(j) = up.transpose();
    neg.col(j) = un.transpose();
    neg_flat.segment(j * dim, dim) = un;
    diff_flat.segment(j * dim, dim) = up - un;
    expand.block(j, j * dim, 1, dim).setOnes();
  }
  // o_pos = softmax over {pos, neg} = sigmoid(z.mu_pos - z.mu_neg).
  ad::Var o_pos = ad::sigmoid(ad::sub(ad::matmul(z, tape.constant(pos)), ad::matmul(z, tape.constant(neg))));
  ad::Var spread = ad::matmul(o_pos, tape.constant(expand));
  ad::Var delta = ad::hadamard(spread, tape.constant(diff_flat.replicate(n, 1)));
  return ad::add(delta, tape.constant(neg_flat.replicate(n, 1)));
}

IntrinsicHead::IntrinsicHead(ParameterStore& store, int zeta, Eigen::Index bank_dim, Eigen::Index latent,
                             nn::Rng& rng) {
  for (Modality m : kCoreModalities)
    proj_[static_cast<std::size_t>(core_index(m))] =
        nn::Linear(store, "proto.intrinsic." + std::string(modality_name(m)), zeta * bank_dim, latent, rng);
}

ad::Var IntrinsicHead::operator()(ad::Tape& tape, Modality m, ad::Var deltas) const {
  return projection(m)(tape, deltas);
}

bool is_positive_pair(const Mat& labels, Eigen::Index i, Eigen::Index p, PositiveRule rule) {
  if (rule == PositiveRule::ExactMatch) return labels.row(i) == labels.row(p);
  return labels.row(i).cwiseProduct(labels.row(p)).sum() > 0.5;
}

ad::Var supcon_loss(ad::Var z, const Mat& labels, double eta, PositiveRule rule) {
  if (!(eta > 0.0)) throw ConfigError("supcon: temperature must be > 0");
  const Mat& zv = z.value();
  const Eigen::Index n = zv.rows();
  if (n < 2) throw DataError("supcon: need at least two embeddings");
  if (labels.rows() != n) throw DataError("supcon: label rows must match embeddings");

  const Mat sim = (zv * zv.transpose()) / eta;
  Mat dsim = Mat::Zero(n, n);  // d loss / d sim, before the 1/contributors factor
  double total = 0.0;
  int contributors = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<Eigen::Index> pos;
    for (Eigen::Index p = 0; p < n; ++p)
      if (p != i && is_positive_pair(labels, i, p, rule)) pos.push_back(p);
    if (pos.empty()) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index r = 0; r < n; ++r)
      if (r != i) mx = std::max(mx, sim(i, r));
    double z_sum = 0.0;
    for (Eigen::Index r = 0; r < n; ++r)
      if (r != i) z_sum += std::exp(sim(i, r) - mx);
    const double lse = mx + std::log(z_sum);
    const double inv_p = 1.0 / static_cast<double>(pos.size());
    double li = 0.0;
    for (auto p : pos) li -= (sim(i, p) - lse);
    total += li * inv_p;
    for (Eigen::Index r = 0; r < n; ++r)
      if (r != i) dsim(i, r) += std::exp(sim(i, r) - lse);
    for (auto p : pos) dsim(i, p) -= inv_p;
    ++contributors;
  }
  ad::Tape* tape = z.tape;
  if (contributors == 0) return tape->constant(Mat::Zero(1, 1));
  const double scale = 1.0 / static_cast<double>(contributors);
  const int iz = z.id;
  return tape->push(Mat::Constant(1, 1, total * scale), tape->requires_grad(iz),
                    [iz, dsim, scale, eta](ad::Tape& t, const Mat& g) {
                      const Mat& zz = t.value(iz);
                      t.accumulate(iz, ((dsim + dsim.transpose()) * zz) * (g(0, 0) * scale / eta));
                    });
}

}  // namespace ramer
