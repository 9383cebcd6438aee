// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-label classification metrics.

#pragma once

#include "ramer/autodiff.hpp"

#include <json.hpp>

#include <vector>

namespace ramer {

struct LabelCounts {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  long support() const { return tp + fn; }
  bool operator==(const LabelCounts&) const = default;
};

struct MetricsReport {
  double acc = 0.0;          // mean per-sample Jaccard
  double acc_jaccard = 0.0;  // same as acc
  double acc_subset = 0.0;   // exact-match ratio
  double precision = 0.0;
  double recall = 0.0;
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  double weighted_f1 = 0.0;
  std::vector<LabelCounts> per_label;

  std::vector<double> label_f1() const;
  bool operator==(const MetricsReport&) const = default;
};

/// pred and gold are samples x labels with 0/1 entries.
MetricsReport compute_metrics(const Mat& pred, const Mat& gold);

nlohmann::ordered_json metrics_to_json(const MetricsReport& r);

}  // namespace ramer
