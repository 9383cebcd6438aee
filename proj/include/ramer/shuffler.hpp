// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0
//
// Stack-shuffle augmentation over concat(C, S) rows and the shared classifier
// trained on the shuffled views.

#pragma once

#include "ramer/autodiff.hpp"
#include "ramer/corpus.hpp"
#include "ramer/nn.hpp"

#include <array>
#include <vector>

namespace ramer {

struct ShuffleSpec {
  int k = 4;
  int rounds = 1;
  bool sample_wise = true;
  bool modality_wise = true;
};

/// Per-modality rotation offsets, indexed by core modality (v, t, a).
inline constexpr std::array<int, 3> kDefaultOffsets = {0, 1, 2};

/// Slot s holds the rows of modality `slots[s]` before shuffling. After
/// shuffling, cell (s, r) holds the row `source_row[s][r]` of slot
/// `source_slot[s][r]`, and carries that source sample's label.
struct ShuffledViews {
  std::vector<Modality> slots;
  Eigen::Index n = 0;
  std::vector<Mat> features;                  // per slot, n x width (empty when index-only)
  std::vector<std::vector<int>> source_slot;  // per slot, per row
  std::vector<std::vector<int>> source_row;
  std::vector<std::vector<int>> sample_perm;  // pi per slot after the sample-wise step
  std::vector<int> modality_rotation;         // per row, applied by the modality-wise step

  /// Labels travelling with each cell of slot s.
  Mat slot_labels(std::size_t s, const Mat& labels) const;
};

/// Contiguous stacks: the first n mod k get ceil(n/k) rows.
std::vector<std::pair<int, int>> stack_bounds(Eigen::Index n, int k);

ShuffledViews identity_views(const std::vector<Modality>& slots, const std::vector<Mat>& rows);
ShuffledViews identity_views(const std::vector<Modality>& slots, Eigen::Index n);

ShuffledViews sample_wise_shuffle(const std::vector<Modality>& slots, const std::vector<Mat>& rows,
                                  const ShuffleSpec& spec, const std::array<int, 3>& offsets = kDefaultOffsets);
/// Index-only variant of the above, applied to existing views.
ShuffledViews sample_wise_shuffle(ShuffledViews views, const ShuffleSpec& spec,
                                  const std::array<int, 3>& offsets = kDefaultOffsets);
ShuffledViews modality_wise_shuffle(ShuffledViews views);

/// Both steps as enabled by `spec`, indices only.
ShuffledViews plan_shuffle(const std::vector<Modality>& slots, Eigen::Index n, const ShuffleSpec& spec,
                           const std::array<int, 3>& offsets = kDefaultOffsets);

/// Applies the view's cell map to per-slot rows (same order as `views.slots`).
std::vector<ad::Var> materialize(const ShuffledViews& views, const std::vector<ad::Var>& rows);
std::vector<Mat> materialize(const ShuffledViews& views, const std::vector<Mat>& rows);

class ShuffleClassifier {
 public:
  ShuffleClassifier() = default;
  ShuffleClassifier(ParameterStore& store, Eigen::Index in, int zeta, nn::Rng& rng);

  ad::Var probs(ad::Tape& tape, ad::Var rows) const;
  const nn::Linear& linear() const { return lin_; }

 private:
  nn::Linear lin_;
};

/// Per-slot probabilities for the materialized views.
std::vector<ad::Var> classify_shuffled(ad::Tape& tape, const ShuffleClassifier& clf, const std::vector<ad::Var>& views);

/// Sum over slots of the sample-mean, label-summed BCE of the slot's probabilities.
ad::Var shuffle_classification_loss(ad::Tape& tape, const ShuffleClassifier& clf, const ShuffledViews& views,
                                    const std::vector<ad::Var>& rows, const Mat& labels);

}  // namespace ramer
