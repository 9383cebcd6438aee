// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0

#include "ramer/harness.hpp"

#include "ramer/errors.hpp"
#include "ramer/random.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <sstream>

namespace ramer {

using ojson = nlohmann::ordered_json;

MetricsReport evaluate(Model& model, const Corpus& corpus, const EvalOptions& opt) {
  const auto indices = corpus.split_indices(opt.split);
  if (indices.empty()) throw DataError("evaluate: split '" + std::string(split_name(opt.split)) + "' is empty");
  const bool corrupt = opt.corruption.p_nonspeaker_drop > 0.0 || opt.corruption.p_random_drop > 0.0;
  Mat probs(static_cast<Eigen::Index>(indices.size()), corpus.zeta);
  const std::size_t bs = 64;
  for (std::size_t start = 0; start < indices.size(); start += bs) {
    const std::size_t end = std::min(indices.size(), start + bs);
    Batch batch = gather_batch(corpus, std::vector<int>(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                                        indices.begin() + static_cast<std::ptrdiff_t>(end)));
    if (corrupt) batch = apply_modality_dropout(batch, opt.corruption, random::derive(opt.corruption_seed, 0xC0, start));
    if (opt.masked) batch = mask_modality(batch, *opt.masked);
    probs.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) = model.predict_proba(batch);
  }
  const Mat gold = labels_matrix(gather_batch(corpus, indices), corpus.zeta);
  return compute_metrics(threshold_predictions(probs, model.config().threshold), gold);
}

// -- ablations ----------------------------------------------------------------

AblationVariant variant_from_name(const std::string& name) {
  AblationVariant v;
  v.name = name;
  if (name == "full") return v;
  std::stringstream ss(name);
  std::string part;
  while (std::getline(ss, part, '+')) v.toggles.set(part);
  v.toggles.validate();
  return v;
}

std::vector<AblationVariant> table_variants() {
  std::vector<AblationVariant> out;
  for (const auto& n : toggle_names()) out.push_back(variant_from_name(n));
  return out;
}

std::vector<std::pair<std::string, double>> metric_fields(const MetricsReport& r) {
  return {{"acc", r.acc},           {"acc_jaccard", r.acc_jaccard}, {"acc_subset", r.acc_subset},
          {"precision", r.precision}, {"recall", r.recall},           {"micro_f1", r.micro_f1},
          {"macro_f1", r.macro_f1},   {"weighted_f1", r.weighted_f1}};
}

const AblationRow& AblationTable::row(const std::string& name) const {
  for (const auto& r : rows)
    if (r.variant.name == name) return r;
  throw ConfigError("ablation table has no row '" + name + "'");
}

AblationTable run_ablation(const Corpus& corpus, const TrainConfig& base, const std::vector<AblationVariant>& variants,
                           const std::vector<std::uint64_t>& seeds, const EvalOptions& eval,
                           const ProgressCallback& progress) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  std::vector<AblationVariant> all = {variant_from_name("full")};
  for (const auto& v : variants) {
    v.toggles.validate();
    if (v.name != "full") all.push_back(v);
  }
  AblationTable table;
  for (const auto& v : all) {
    AblationRow row;
    row.variant = v;
    for (auto seed : seeds) {
      TrainConfig cfg = base;
      cfg.toggles = v.toggles;
      cfg.seed = seed;
      auto state = fit(corpus, cfg);
      EvalOptions e = eval;
      e.corruption_seed = random::derive(eval.corruption_seed, 0xAB, seed);
      row.per_seed.push_back(evaluate(*state->model, corpus, e));
      if (progress) progress(v.name, seed, row.per_seed.back());
    }
    for (const auto& [name, unused] : metric_fields(row.per_seed.front())) {
      (void)unused;
      std::vector<double> xs;
      for (const auto& r : row.per_seed)
        for (const auto& [n2, val] : metric_fields(r))
          if (n2 == name) xs.push_back(val);
      double mean = 0.0;
      for (double x : xs) mean += x;
      mean /= static_cast<double>(xs.size());
      double var = 0.0;
      for (double x : xs) var += (x - mean) * (x - mean);
      const double sd = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
      row.summary[name] = {mean, sd};
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

ojson ablation_to_json(const AblationTable& table) {
  ojson rows = ojson::array();
  for (const auto& r : table.rows) {
    ojson jr;
    jr["variant"] = r.variant.name;
    jr["toggles"] = r.variant.toggles.names();
    ojson mean = ojson::object(), sd = ojson::object();
    for (const auto& [name, unused] : metric_fields(r.per_seed.front())) {
      (void)unused;
      mean[name] = r.summary.at(name).mean;
      sd[name] = r.summary.at(name).std;
    }
    jr["mean"] = mean;
    jr["std"] = sd;
    ojson per = ojson::array();
    for (const auto& m : r.per_seed) per.push_back(metrics_to_json(m));
    jr["per_seed"] = per;
    rows.push_back(jr);
  }
  return ojson{{"rows", rows}};
}

// -- projections --------------------------------------------------------------

Mat pca_2d(const Mat& x) {
  if (x.rows() == 0) return Mat(0, 2);
  const RowVec mean = x.colwise().mean();
  const Mat centered = x.rowwise() - mean;
  const Mat cov = centered.transpose() * centered / std::max<double>(1.0, static_cast<double>(x.rows() - 1));
  Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  const Eigen::Index d = cov.rows();
  Mat axes(d, 2);
  for (int c = 0; c < 2; ++c) {
    Eigen::VectorXd a = c < d ? Eigen::VectorXd(eig.eigenvectors().col(d - 1 - c)) : Eigen::VectorXd::Zero(d);
    Eigen::Index arg = 0;
    a.cwiseAbs().maxCoeff(&arg);
    if (a(arg) < 0.0) a = -a;
    axes.col(c) = a;
  }
  return centered * axes;
}

Mat tsne_2d(const Mat& x, double perplexity, int iterations, std::uint64_t seed) {
  const Eigen::Index n = x.rows();
  if (n < 2) return Mat::Zero(n, 2);
  const double perp = std::min(perplexity, static_cast<double>(n - 1) / 3.0);
  const Eigen::VectorXd sq = x.rowwise().squaredNorm();
  Mat dist = (-2.0 * x * x.transpose()).colwise() + sq;
  dist.rowwise() += sq.transpose();
  dist = dist.cwiseMax(0.0);

  Mat p = Mat::Zero(n, n);
  const double target = std::log(std::max(perp, 1.0));
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0, lo = -1.0, hi = -1.0;
    for (int iter = 0; iter < 64; ++iter) {
      double sum = 0.0, weighted = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        const double w = std::exp(-beta * dist(i, j));
        p(i, j) = w;
        sum += w;
        weighted += w * dist(i, j);
      }
      sum = std::max(sum, 1e-300);
      const double entropy = std::log(sum) + beta * weighted / sum;
      p.row(i) /= sum;
      const double diff = entropy - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = hi < 0 ? beta * 2.0 : (beta + hi) / 2.0;
      } else {
        hi = beta;
        beta = lo < 0 ? beta / 2.0 : (beta + lo) / 2.0;
      }
    }
  }
  p = (p + p.transpose()) / (2.0 * static_cast<double>(n));
  p = p.cwiseMax(1e-12);
  p.diagonal().setZero();

  random::Engine rng(random::derive(seed, 0x75e));
  Mat y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < 2; ++c) y(i, c) = 1e-4 * random::normal(rng);
  Mat update = Mat::Zero(n, 2), gains = Mat::Ones(n, 2);
  const double lr = 200.0;
  for (int it = 0; it < iterations; ++it) {
    const double exaggeration = it < 100 ? 12.0 : 1.0;
    const double momentum = it < 250 ? 0.5 : 0.8;
    const Eigen::VectorXd ysq = y.rowwise().squaredNorm();
    Mat num = (-2.0 * y * y.transpose()).colwise() + ysq;
    num.rowwise() += ysq.transpose();
    num = (1.0 + num.array()).inverse().matrix();
    num.diagonal().setZero();
    const double qsum = std::max(num.sum(), 1e-300);
    const Mat w = ((exaggeration * p).array() - num.array() / qsum).matrix().cwiseProduct(num);
    const Mat grad = 4.0 * (w.rowwise().sum().asDiagonal() * y - w * y);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int c = 0; c < 2; ++c) {
        const bool same = (grad(i, c) > 0) == (update(i, c) > 0);
        gains(i, c) = std::max(0.01, same ? gains(i, c) * 0.8 : gains(i, c) + 0.2);
        update(i, c) = momentum * update(i, c) - lr * gains(i, c) * grad(i, c);
      }
    y += update;
    y.rowwise() -= y.colwise().mean();
  }
  return y;
}

namespace {

std::string signature(const ClipSample& s) {
  std::string out;
  for (auto l : s.labels) out.push_back(l ? '1' : '0');
  return out;
}

}  // namespace

std::vector<ProjectionRow> export_projection(Model& model, const Corpus& corpus, ProjectionKind kind,
                                             const ProjectionOptions& opt) {
  const auto indices = corpus.split_indices(opt.split);
  std::vector<ProjectionRow> rows;
  std::vector<RowVec> vecs;
  const std::size_t bs = 64;
  for (std::size_t start = 0; start < indices.size(); start += bs) {
    const std::size_t end = std::min(indices.size(), start + bs);
    const Batch batch = gather_batch(corpus, std::vector<int>(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                                              indices.begin() + static_cast<std::ptrdiff_t>(end)));
    ad::Tape tape;
    ForwardOptions fo;
    fo.train = false;
    fo.losses = false;
    ForwardOutput out = model.forward(tape, batch, fo);
    std::vector<std::pair<std::string, const ModalityVars*>> parts;
    if (kind == ProjectionKind::SpecCommon) {
      parts = {{"specificity", &out.spec}, {"commonality", &out.common}};
    } else {
      parts = {{"alpha", &out.alpha.pooled}, {"beta", &out.beta}, {"gamma", &out.gamma}};
    }
    for (std::size_t b = 0; b < batch.size(); ++b)
      for (Modality m : kCoreModalities)
        for (const auto& [name, vars] : parts) {
          const ad::Var& v = (*vars)[static_cast<std::size_t>(core_index(m))];
          if (!v.valid()) continue;
          rows.push_back(ProjectionRow{batch[b].id, m, name, signature(batch[b]), 0.0, 0.0});
          vecs.push_back(v.value().row(static_cast<Eigen::Index>(b)));
        }
  }
  if (rows.empty()) return rows;
  Mat x(static_cast<Eigen::Index>(vecs.size()), vecs.front().size());
  for (std::size_t i = 0; i < vecs.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = vecs[i];
  const Mat y = opt.pca ? pca_2d(x) : tsne_2d(x, opt.perplexity, opt.iterations, opt.seed);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].x = y(static_cast<Eigen::Index>(i), 0);
    rows[i].y = y(static_cast<Eigen::Index>(i), 1);
  }
  return rows;
}

std::string projection_csv(const std::vector<ProjectionRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "sample_id,modality,component,label_signature,x,y\n";
  for (const auto& r : rows)
    os << r.sample_id << ',' << modality_name(r.modality) << ',' << r.component << ',' << r.label_signature << ','
       << r.x << ',' << r.y << '\n';
  return os.str();
}

// -- modality-to-label correlation ---------------------------------------------

Mat modality_label_correlation(Model& model, const Corpus& corpus, Split split) {
  EvalOptions opt;
  opt.split = split;
  const auto full = evaluate(model, corpus, opt).label_f1();
  Mat corr(corpus.zeta, 3);
  for (Modality m : kCoreModalities) {
    opt.masked = m;
    const auto masked = evaluate(model, corpus, opt).label_f1();
    for (int j = 0; j < corpus.zeta; ++j)
      corr(j, core_index(m)) = std::max(0.0, full[static_cast<std::size_t>(j)] - masked[static_cast<std::size_t>(j)]);
  }
  for (Eigen::Index j = 0; j < corr.rows(); ++j) {
    const double s = corr.row(j).sum();
    if (s > 0.0) corr.row(j) /= s;
    else corr.row(j).setConstant(1.0 / 3.0);
  }
  return corr;
}

std::string correlation_csv(const Mat& corr) {
  std::ostringstream os;
  os.precision(17);
  os << "label,visual,textual,acoustic\n";
  for (Eigen::Index j = 0; j < corr.rows(); ++j)
    os << j << ',' << corr(j, 0) << ',' << corr(j, 1) << ',' << corr(j, 2) << '\n';
  return os.str();
}

}  // namespace ramer
