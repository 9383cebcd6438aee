// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0

#include "ramer/metrics.hpp"

#include "ramer/errors.hpp"

namespace ramer {

namespace {

double ratio(long num, long den) { return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den); }

double harmonic(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

double f1_of(long tp, long fp, long fn) { return harmonic(ratio(tp, tp + fp), ratio(tp, tp + fn)); }

}  // namespace

std::vector<double> MetricsReport::label_f1() const {
  std::vector<double> out;
  for (const auto& c : per_label) out.push_back(f1_of(c.tp, c.fp, c.fn));
  return out;
}

MetricsReport compute_metrics(const Mat& pred, const Mat& gold) {
  if (pred.rows() != gold.rows() || pred.cols() != gold.cols())
    throw DataError("compute_metrics: prediction and gold shapes differ");
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const double p = pred.data()[i], g = gold.data()[i];
    if ((p != 0.0 && p != 1.0) || (g != 0.0 && g != 1.0)) throw DataError("compute_metrics: entries must be 0 or 1");
  }
  MetricsReport r;
  r.per_label.resize(static_cast<std::size_t>(pred.cols()));
  double jaccard = 0.0;
  long exact = 0;
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    long inter = 0, uni = 0;
    bool same = true;
    for (Eigen::Index j = 0; j < pred.cols(); ++j) {
      const bool p = pred(i, j) > 0.5, g = gold(i, j) > 0.5;
      auto& c = r.per_label[static_cast<std::size_t>(j)];
      if (p && g) ++c.tp;
      if (p && !g) ++c.fp;
      if (!p && g) ++c.fn;
      inter += (p && g) ? 1 : 0;
      uni += (p || g) ? 1 : 0;
      same = same && (p == g);
    }
    jaccard += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    exact += same ? 1 : 0;
  }
  const auto n = static_cast<double>(pred.rows());
  r.acc_jaccard = pred.rows() == 0 ? 0.0 : jaccard / n;
  r.acc = r.acc_jaccard;
  r.acc_subset = pred.rows() == 0 ? 0.0 : static_cast<double>(exact) / n;

  long tp = 0, fp = 0, fn = 0, support = 0;
  double macro = 0.0, weighted = 0.0;
  for (const auto& c : r.per_label) {
    tp += c.tp;
    fp += c.fp;
    fn += c.fn;
    support += c.support();
    const double f = f1_of(c.tp, c.fp, c.fn);
    macro += f;
    weighted += f * static_cast<double>(c.support());
  }
  r.precision = ratio(tp, tp + fp);
  r.recall = ratio(tp, tp + fn);
  r.micro_f1 = harmonic(r.precision, r.recall);
  r.macro_f1 = r.per_label.empty() ? 0.0 : macro / static_cast<double>(r.per_label.size());
  r.weighted_f1 = support == 0 ? 0.0 : weighted / static_cast<double>(support);
  return r;
}

nlohmann::ordered_json metrics_to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["acc"] = r.acc;
  j["acc_jaccard"] = r.acc_jaccard;
  j["acc_subset"] = r.acc_subset;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["micro_f1"] = r.micro_f1;
  j["macro_f1"] = r.macro_f1;
  j["weighted_f1"] = r.weighted_f1;
  auto labels = nlohmann::ordered_json::array();
  for (const auto& c : r.per_label) labels.push_back({{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}});
  j["per_label"] = labels;
  return j;
}

}  // namespace ramer
