// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation, ablation runs and analysis exporters.

#pragma once

#include "ramer/metrics.hpp"
#include "ramer/trainer.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace ramer {

/// Test-time corruption applied before prediction; zero probabilities mean clean inputs.
struct EvalOptions {
  Split split = Split::Test;
  DropoutPolicy corruption;
  std::uint64_t corruption_seed = 0;
  std::optional<Modality> masked;
};

MetricsReport evaluate(Model& model, const Corpus& corpus, const EvalOptions& opt = {});

struct AblationVariant {
  std::string name;
  Toggles toggles;
};

/// "full", a toggle name, or toggle names joined by '+'.
AblationVariant variant_from_name(const std::string& name);
/// The ten single-toggle variants in table order.
std::vector<AblationVariant> table_variants();

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;
};

struct AblationRow {
  AblationVariant variant;
  std::vector<MetricsReport> per_seed;
  std::map<std::string, MetricSummary> summary;  // keyed by metric field name
};

struct AblationTable {
  std::vector<AblationRow> rows;  // full model first
  const AblationRow& row(const std::string& name) const;
};

using ProgressCallback = std::function<void(const std::string& variant, std::uint64_t seed, const MetricsReport&)>;

/// Retrains every variant (the full model is always included first) once per seed.
AblationTable run_ablation(const Corpus& corpus, const TrainConfig& base, const std::vector<AblationVariant>& variants,
                           const std::vector<std::uint64_t>& seeds, const EvalOptions& eval = {},
                           const ProgressCallback& progress = {});

nlohmann::ordered_json ablation_to_json(const AblationTable& table);

/// Scalar metric fields of a report in declaration order.
std::vector<std::pair<std::string, double>> metric_fields(const MetricsReport& r);

enum class ProjectionKind { SpecCommon, Recon };

struct ProjectionRow {
  std::string sample_id;
  Modality modality = Modality::Visual;
  std::string component;
  std::string label_signature;
  double x = 0.0;
  double y = 0.0;
};

struct ProjectionOptions {
  bool pca = false;
  std::uint64_t seed = 0;
  double perplexity = 30.0;
  int iterations = 500;
  Split split = Split::Test;
};

std::vector<ProjectionRow> export_projection(Model& model, const Corpus& corpus, ProjectionKind kind,
                                             const ProjectionOptions& opt = {});
std::string projection_csv(const std::vector<ProjectionRow>& rows);

/// Rows of `x` projected on the top two principal axes; each axis is signed so
/// its largest-magnitude loading is positive.
Mat pca_2d(const Mat& x);
/// Exact t-SNE to two dimensions with a fixed seed.
Mat tsne_2d(const Mat& x, double perplexity, int iterations, std::uint64_t seed);

/// zeta x 3: per-label F1 drop when each modality is masked at inference,
/// clipped at zero and normalized per row (all-zero rows become 1/3).
Mat modality_label_correlation(Model& model, const Corpus& corpus, Split split = Split::Test);
std::string correlation_csv(const Mat& corr);

}  // namespace ramer
