// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0

#include "ramer/shuffler.hpp"

#include "ramer/errors.hpp"

namespace ramer {

Mat ShuffledViews::slot_labels(std::size_t s, const Mat& labels) const {
  if (labels.rows() != n) throw DataError("shuffle: label rows must match batch size");
  Mat out(n, labels.cols());
  for (Eigen::Index r = 0; r < n; ++r) out.row(r) = labels.row(source_row[s][static_cast<std::size_t>(r)]);
  return out;
}

std::vector<std::pair<int, int>> stack_bounds(Eigen::Index n, int k) {
  if (k < 1) throw ConfigError("shuffle: k must be >= 1");
  if (k > n) throw ConfigError("shuffle: k (" + std::to_string(k) + ") exceeds batch size " + std::to_string(n));
  std::vector<std::pair<int, int>> out;
  const int base = static_cast<int>(n) / k, extra = static_cast<int>(n) % k;
  int start = 0;
  for (int s = 0; s < k; ++s) {
    const int size = base + (s < extra ? 1 : 0);
    out.emplace_back(start, size);
    start += size;
  }
  return out;
}

ShuffledViews identity_views(const std::vector<Modality>& slots, Eigen::Index n) {
  if (slots.empty()) throw ConfigError("shuffle: no modality slots");
  ShuffledViews v;
  v.slots = slots;
  v.n = n;
  v.source_slot.resize(slots.size());
  v.source_row.resize(slots.size());
  v.sample_perm.resize(slots.size());
  for (std::size_t s = 0; s < slots.size(); ++s) {
    v.source_slot[s].assign(static_cast<std::size_t>(n), static_cast<int>(s));
    for (int r = 0; r < n; ++r) {
      v.source_row[s].push_back(r);
      v.sample_perm[s].push_back(r);
    }
  }
  v.modality_rotation.assign(static_cast<std::size_t>(n), 0);
  return v;
}

ShuffledViews identity_views(const std::vector<Modality>& slots, const std::vector<Mat>& rows) {
  if (rows.size() != slots.size()) throw DataError("shuffle: one feature matrix per slot expected");
  const Eigen::Index n = rows.empty() ? 0 : rows.front().rows();
  for (const auto& r : rows)
    if (r.rows() != n) throw DataError("shuffle: slots must share the batch size");
  ShuffledViews v = identity_views(slots, n);
  v.features = rows;
  return v;
}

namespace {

std::vector<Mat> original_rows(const ShuffledViews& v) {
  // Undo the current cell map so features can be re-gathered after a new step.
  std::vector<Mat> out(v.features.size());
  for (std::size_t s = 0; s < v.features.size(); ++s) out[s].resize(v.n, v.features[s].cols());
  for (std::size_t s = 0; s < v.features.size(); ++s)
    for (Eigen::Index r = 0; r < v.n; ++r) {
      const auto ss = static_cast<std::size_t>(v.source_slot[s][static_cast<std::size_t>(r)]);
      out[ss].row(v.source_row[s][static_cast<std::size_t>(r)]) = v.features[s].row(r);
    }
  return out;
}

}  // namespace

ShuffledViews sample_wise_shuffle(ShuffledViews v, const ShuffleSpec& spec, const std::array<int, 3>& offsets) {
  if (spec.rounds < 0) throw ConfigError("shuffle: rounds must be >= 0");
  const auto bounds = stack_bounds(v.n, spec.k);
  const std::vector<Mat> orig = v.features.empty() ? std::vector<Mat>{} : original_rows(v);
  for (std::size_t s = 0; s < v.slots.size(); ++s) {
    const int shift_base = spec.rounds * offsets[static_cast<std::size_t>(core_index(v.slots[s]))];
    std::vector<int> perm(static_cast<std::size_t>(v.n));
    for (auto [start, size] : bounds) {
      const int shift = size > 0 ? shift_base % size : 0;
      for (int i = 0; i < size; ++i) perm[static_cast<std::size_t>(start + i)] = start + (i + shift) % size;
    }
    std::vector<int> src_slot(perm.size()), src_row(perm.size());
    for (std::size_t r = 0; r < perm.size(); ++r) {
      src_slot[r] = v.source_slot[s][static_cast<std::size_t>(perm[r])];
      src_row[r] = v.source_row[s][static_cast<std::size_t>(perm[r])];
    }
    std::vector<int> composed(perm.size());
    for (std::size_t r = 0; r < perm.size(); ++r) composed[r] = v.sample_perm[s][static_cast<std::size_t>(perm[r])];
    v.source_slot[s] = std::move(src_slot);
    v.source_row[s] = std::move(src_row);
    v.sample_perm[s] = std::move(composed);
  }
  if (!orig.empty()) v.features = materialize(v, orig);
  return v;
}

ShuffledViews sample_wise_shuffle(const std::vector<Modality>& slots, const std::vector<Mat>& rows,
                                  const ShuffleSpec& spec, const std::array<int, 3>& offsets) {
  return sample_wise_shuffle(identity_views(slots, rows), spec, offsets);
}

ShuffledViews modality_wise_shuffle(ShuffledViews v) {
  const auto m = static_cast<int>(v.slots.size());
  const std::vector<Mat> orig = v.features.empty() ? std::vector<Mat>{} : original_rows(v);
  auto src_slot = v.source_slot;
  auto src_row = v.source_row;
  for (Eigen::Index r = 0; r < v.n; ++r) {
    const auto ri = static_cast<std::size_t>(r);
    const int rot = static_cast<int>(r % 3) % m;
    for (int s = 0; s < m; ++s) {
      const auto from = static_cast<std::size_t>((s + rot) % m);
      src_slot[static_cast<std::size_t>(s)][ri] = v.source_slot[from][ri];
      src_row[static_cast<std::size_t>(s)][ri] = v.source_row[from][ri];
    }
    v.modality_rotation[ri] = (v.modality_rotation[ri] + rot) % m;
  }
  v.source_slot = std::move(src_slot);
  v.source_row = std::move(src_row);
  if (!orig.empty()) v.features = materialize(v, orig);
  return v;
}

ShuffledViews plan_shuffle(const std::vector<Modality>& slots, Eigen::Index n, const ShuffleSpec& spec,
                           const std::array<int, 3>& offsets) {
  ShuffledViews v = identity_views(slots, n);
  if (spec.sample_wise) v = sample_wise_shuffle(std::move(v), spec, offsets);
  if (spec.modality_wise) v = modality_wise_shuffle(std::move(v));
  return v;
}

namespace {

std::vector<int> flat_index(const ShuffledViews& v, std::size_t s) {
  std::vector<int> idx(static_cast<std::size_t>(v.n));
  for (std::size_t r = 0; r < idx.size(); ++r)
    idx[r] = v.source_slot[s][r] * static_cast<int>(v.n) + v.source_row[s][r];
  return idx;
}

}  // namespace

std::vector<ad::Var> materialize(const ShuffledViews& v, const std::vector<ad::Var>& rows) {
  if (rows.size() != v.slots.size()) throw DataError("shuffle: one feature matrix per slot expected");
  ad::Var stacked = ad::concat_rows(rows);
  std::vector<ad::Var> out;
  for (std::size_t s = 0; s < v.slots.size(); ++s) out.push_back(ad::gather_rows(stacked, flat_index(v, s)));
  return out;
}

std::vector<Mat> materialize(const ShuffledViews& v, const std::vector<Mat>& rows) {
  if (rows.size() != v.slots.size()) throw DataError("shuffle: one feature matrix per slot expected");
  std::vector<Mat> out;
  for (std::size_t s = 0; s < v.slots.size(); ++s) {
    Mat m(v.n, rows[s].cols());
    for (Eigen::Index r = 0; r < v.n; ++r) {
      const auto ri = static_cast<std::size_t>(r);
      const auto& src = rows[static_cast<std::size_t>(v.source_slot[s][ri])];
      if (src.cols() != m.cols() || src.rows() != v.n) throw DataError("shuffle: slot feature shapes differ");
      m.row(r) = src.row(v.source_row[s][ri]);
    }
    out.push_back(std::move(m));
  }
  return out;
}

ShuffleClassifier::ShuffleClassifier(ParameterStore& store, Eigen::Index in, int zeta, nn::Rng& rng)
    : lin_(store, "shuffle.classifier", in, zeta, rng) {}

ad::Var ShuffleClassifier::probs(ad::Tape& tape, ad::Var rows) const { return ad::sigmoid(lin_(tape, rows)); }

std::vector<ad::Var> classify_shuffled(ad::Tape& tape, const ShuffleClassifier& clf,
                                       const std::vector<ad::Var>& views) {
  std::vector<ad::Var> out;
  for (const auto& v : views) out.push_back(clf.probs(tape, v));
  return out;
}

ad::Var shuffle_classification_loss(ad::Tape& tape, const ShuffleClassifier& clf, const ShuffledViews& views,
                                    const std::vector<ad::Var>& rows, const Mat& labels) {
  const auto cells = materialize(views, rows);
  const auto probs = classify_shuffled(tape, clf, cells);
  ad::Var total = tape.constant(Mat::Zero(1, 1));
  for (std::size_t s = 0; s < probs.size(); ++s) total = ad::add(total, ad::bce_mean(probs[s], views.slot_labels(s, labels)));
  return total;
}

}  // namespace ramer
