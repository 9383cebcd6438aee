// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include "ramer/errors.hpp"
#include "ramer/harness.hpp"
#include "ramer/random.hpp"
#include "support.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace ramer;
using test::random_mat;

namespace {

using Clock = std::chrono::steady_clock;

std::map<int, std::pair<bool, std::string>> results;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(int id, bool ok, const std::string& name, const std::string& detail) {
  results[id] = {ok, name + ": " + detail};
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

const std::vector<Modality> kVta = {Modality::Visual, Modality::Textual, Modality::Acoustic};

std::vector<Parameter*> params_of(ParameterStore& s) {
  std::vector<Parameter*> out;
  for (auto& p : s.all()) out.push_back(&p);
  return out;
}

// -- 1 ------------------------------------------------------------------------

void loss_identities() {
  const auto t0 = Clock::now();
  const Corpus corpus = generate_synthetic(test::small_gen_config(120, 3));
  TrainConfig cfg = test::tiny_config(5);
  cfg.epochs = 3;
  cfg.lambda_r = 0.7;
  cfg.lambda_s = 0.4;
  cfg.lambda_a = 0.6;
  cfg.lambda_o = 0.3;
  cfg.lambda_c = 0.8;
  cfg.dropout.p_nonspeaker_drop = 0.5;
  cfg.dropout.p_random_drop = 0.2;
  TrainState state(cfg, ModelShape::of(corpus));
  std::vector<LossReport> reports;
  train_epochs(state, corpus, cfg.epochs, {}, &reports);
  const auto w = cfg.adversarial_weights();
  double worst = 0.0;
  for (const auto& r : reports) {
    const double total = r.cls_suf + r.cls_lsr + cfg.lambda_r * r.rec + cfg.lambda_s * r.scl + r.adv;
    const double adv = w.lambda_a * (r.adv_C + r.adv_S) + w.lambda_o * r.orth + w.lambda_c * r.cml;
    worst = std::max({worst, std::abs(r.total - total), std::abs(r.adv - adv)});
  }
  const double secs = seconds_since(t0);
  report(1, worst <= 1e-6 && secs < 1.0 && !reports.empty(), "loss identities",
         std::to_string(reports.size()) + " steps, max deviation " + fmt("%.2e", worst) + " (<= 1e-6), " +
             fmt("%.2f s", secs) + " (< 1 s)");
}

// -- 2 ------------------------------------------------------------------------

void gradient_checks() {
  const auto t0 = Clock::now();
  const int n = 5, zeta = 3;
  const Eigen::Index width = 4;
  const Mat labels = test::random_binary(n, zeta, 900);
  std::vector<std::pair<std::string, double>> errs;

  auto leaves = [](ParameterStore& s, const std::string& tag, Eigen::Index rows, Eigen::Index cols,
                   std::uint64_t seed) {
    std::array<Parameter*, 3> out;
    for (std::size_t m = 0; m < 3; ++m)
      out[m] = &s.add(tag + std::to_string(m), random_mat(rows, cols, seed + m));
    return out;
  };
  auto vars = [](ad::Tape& t, const std::array<Parameter*, 3>& ps) {
    ModalityVars v;
    for (std::size_t m = 0; m < 3; ++m) v[m] = t.param(*ps[m]);
    return v;
  };

  {
    ParameterStore s;
    nn::Rng rng(1);
    Adversary adv(s, width, zeta, rng);
    const auto x = leaves(s, "x", n, width, 10);
    errs.push_back({"commonality adversarial", test::gradient_error(params_of(s), [&](ad::Tape& t) {
                      const ModalityVars xv = vars(t, x);
                      ModalityVars logits;
                      for (std::size_t m = 0; m < 3; ++m)
                        logits[m] = adv.discriminator_logits(t, adv.generate_commonality(t, xv[m]));
                      return modality_adversarial_loss(logits);
                    })});
    errs.push_back({"specificity adversarial", test::gradient_error(params_of(s), [&](ad::Tape& t) {
                      const ModalityVars xv = vars(t, x);
                      ModalityVars logits;
                      for (Modality m : kCoreModalities) {
                        const auto i = static_cast<std::size_t>(core_index(m));
                        logits[i] = adv.discriminator_logits(t, adv.extract_specificity(t, m, xv[i]));
                      }
                      return modality_adversarial_loss(logits);
                    })});
    errs.push_back({"common semantic", test::gradient_error(params_of(s), [&](ad::Tape& t) {
                      const ModalityVars xv = vars(t, x);
                      ModalityVars probs;
                      for (std::size_t m = 0; m < 3; ++m)
                        probs[m] = adv.common_label_probs(t, adv.generate_commonality(t, xv[m]));
                      return common_semantic_loss(probs, labels);
                    })});
  }
  {
    ParameterStore s;
    const auto c = leaves(s, "c", n, width, 20);
    const auto sp = leaves(s, "s", n, width, 30);
    errs.push_back({"orthogonality", test::gradient_error(params_of(s), [&](ad::Tape& t) {
                      return orthogonality_loss(vars(t, c), vars(t, sp));
                    })});
  }
  {
    ParameterStore s;
    const auto dec = leaves(s, "dec", n, width, 40);
    const auto beta = leaves(s, "beta", n, width, 50);
    const std::array<Mat, 3> target = {random_mat(n, width, 60), random_mat(n, width, 61), random_mat(n, width, 62)};
    const Mat include = test::random_binary(n, 3, 63, 0.7);
    errs.push_back({"reconstruction", test::gradient_error(params_of(s), [&](ad::Tape& t) {
                      ModalityVars tv;
                      for (std::size_t m = 0; m < 3; ++m) tv[m] = t.constant(target[m]);
                      return reconstruction_loss(tv, vars(t, dec), vars(t, beta), include);
                    })});
  }
  {
    ParameterStore s;
    ReconConfig rc;
    rc.width = width;
    rc.latent = 2;
    rc.zeta = zeta;
    nn::Rng rng(2);
    Reconstructor rec(s, rc, rng);
    const auto a = leaves(s, "a", n, width, 70);
    const auto b = leaves(s, "b", n, width, 80);
    const auto g = leaves(s, "g", n, width, 90);
    errs.push_back({"three-space classification", test::gradient_error(params_of(s), [&](ad::Tape& t) {
                      const std::array<ModalityVars, 3> spaces = {vars(t, a), vars(t, b), vars(t, g)};
                      return classify_three_spaces(t, rec, spaces, labels, SpaceWeights{0.7, 1.1, 0.9}).loss;
                    })});
  }
  {
    ParameterStore s;
    Parameter& z = s.add("z", random_mat(3 * n, width, 100));
    const Mat y = test::random_binary(3 * n, zeta, 101);
    errs.push_back({"supervised contrastive", test::gradient_error(params_of(s), [&](ad::Tape& t) {
                      return supcon_loss(ad::l2_normalize_rows(t.param(z)), y, 0.5);
                    })});
  }
  {
    ParameterStore s;
    nn::Rng rng(3);
    ShuffleClassifier clf(s, 2 * width, zeta, rng);
    const auto rows = leaves(s, "r", n, 2 * width, 110);
    ShuffleSpec spec;
    spec.k = 2;
    const ShuffledViews views = plan_shuffle(kVta, n, spec);
    errs.push_back({"shuffle classification", test::gradient_error(params_of(s), [&](ad::Tape& t) {
                      const ModalityVars rv = vars(t, rows);
                      return shuffle_classification_loss(t, clf, views, {rv[0], rv[1], rv[2]}, labels);
                    })});
  }
  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, e] : errs)
    if (e >= worst) {
      worst = e;
      worst_name = name;
    }
  const double secs = seconds_since(t0);
  report(2, worst < 1e-4 && secs < 60.0, "gradient checks",
         std::to_string(errs.size()) + " loss terms, max relative error " + fmt("%.2e", worst) + " (" + worst_name +
             ", < 1e-4), " + fmt("%.2f s", secs) + " (< 60 s)");
}

// -- 3 ------------------------------------------------------------------------

void closed_forms() {
  ad::Tape t;
  const int zeta = 6;
  ModalityVars zeros, half;
  for (std::size_t m = 0; m < 3; ++m) {
    zeros[m] = t.constant(Mat::Zero(4, 3));
    half[m] = t.constant(Mat::Constant(4, zeta, 0.5));
  }
  const double ce = modality_adversarial_loss(zeros).scalar();
  const double bce = common_semantic_loss(half, test::random_binary(4, zeta, 7)).scalar();

  Mat c(2, 3), s(2, 3);
  c << 1, 0, 0, 0, 2, 0;
  s << 0, 3, 0, 0, 0, -1;
  ModalityVars cv, sv;
  for (std::size_t m = 0; m < 3; ++m) {
    cv[m] = t.constant(c);
    sv[m] = t.constant(s);
  }
  const double orth = orthogonality_loss(cv, sv).scalar();

  Mat z3(3, 2), y3(3, 2);
  z3 << 1, 0, 1, 0, 0, 1;
  y3 << 1, 0, 1, 0, 0, 1;
  const double scl = supcon_loss(t.constant(z3), y3, 1.0).scalar();

  const bool ok = std::abs(ce - std::log(3.0)) <= 1e-6 && std::abs(bce - zeta * std::log(2.0)) <= 1e-6 &&
                  orth == 0.0 && std::abs(scl - 0.3133) <= 1e-4;
  report(3, ok, "closed-form values",
         "CE " + fmt("%.9f", ce) + " vs ln3, BCE " + fmt("%.9f", bce) + " vs 6 ln2, orth " + fmt("%g", orth) +
             " (exact 0), SupCon " + fmt("%.6f", scl) + " vs 0.3133");
}

// -- 4 ------------------------------------------------------------------------

void metric_oracle() {
  const auto t0 = Clock::now();
  random::Engine rng(4);
  int mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto n = static_cast<Eigen::Index>(1 + random::below(rng, 30));
    const auto z = static_cast<Eigen::Index>(1 + random::below(rng, 8));
    const Mat pred = test::random_binary(n, z, rng(), random::uniform01(rng));
    const Mat gold = test::random_binary(n, z, rng(), random::uniform01(rng));
    if (!(compute_metrics(pred, gold) == test::metrics_oracle(pred, gold))) ++mismatches;
  }
  const double secs = seconds_since(t0);
  report(4, mismatches == 0 && secs < 10.0, "metric oracle",
         std::to_string(mismatches) + " of 1000 random cases differ (exact), " + fmt("%.2f s", secs) + " (< 10 s)");
}

// -- 5 ------------------------------------------------------------------------

std::vector<Mat> tagged_rows(Eigen::Index n) {
  std::vector<Mat> rows;
  for (int s = 0; s < 3; ++s) {
    Mat m(n, 2);
    for (Eigen::Index r = 0; r < n; ++r) m.row(r) << s, static_cast<double>(r);
    rows.push_back(m);
  }
  return rows;
}

void shuffle_algebra() {
  const auto t0 = Clock::now();
  long cases = 0, bad = 0;
  for (int n = 1; n <= 12; ++n) {
    const auto rows = tagged_rows(n);
    const Mat labels = test::random_binary(n, 4, static_cast<std::uint64_t>(n));
    for (int k = 1; k <= std::min(4, n); ++k) {
      for (int rounds = 0; rounds <= 3; ++rounds) {
        ++cases;
        ShuffleSpec spec;
        spec.k = k;
        spec.rounds = rounds;
        ShuffledViews v = sample_wise_shuffle(kVta, rows, spec);
        for (std::size_t s = 0; s < 3; ++s)
          if (v.sample_perm[s] != test::pop_append_oracle(n, k, rounds * static_cast<int>(s))) ++bad;
        v = modality_wise_shuffle(v);
        std::multiset<std::pair<int, int>> before, after;
        for (int s = 0; s < 3; ++s)
          for (int r = 0; r < n; ++r) {
            before.insert({s, r});
            after.insert({static_cast<int>(v.features[static_cast<std::size_t>(s)](r, 0)),
                          static_cast<int>(v.features[static_cast<std::size_t>(s)](r, 1))});
          }
        if (before != after) ++bad;
        for (std::size_t s = 0; s < 3; ++s) {
          const Mat sl = v.slot_labels(s, labels);
          for (int r = 0; r < n; ++r) {
            const auto ri = static_cast<std::size_t>(r);
            const int replay = v.sample_perm[(s + static_cast<std::size_t>(v.modality_rotation[ri])) % 3][ri];
            if (v.source_row[s][ri] != replay || sl.row(r) != labels.row(replay) ||
                v.features[s](r, 1) != static_cast<double>(replay))
              ++bad;
          }
        }
      }
      // Applying one pop per round to every stack for lcm(stack sizes) rounds restores the order.
      ++cases;
      int period = 1;
      for (const auto& [start, size] : stack_bounds(n, k)) period = std::lcm(period, size);
      ShuffleSpec one;
      one.k = k;
      one.rounds = 1;
      ShuffledViews v = identity_views({Modality::Textual, Modality::Visual}, n);
      for (int i = 0; i < period; ++i) v = sample_wise_shuffle(v, one, {1, 1, 1});
      std::vector<int> id(static_cast<std::size_t>(n));
      std::iota(id.begin(), id.end(), 0);
      for (const auto& perm : v.sample_perm)
        if (perm != id) ++bad;
    }
    ++cases;
    ShuffledViews thrice = identity_views(kVta, rows);
    for (int i = 0; i < 3; ++i) thrice = modality_wise_shuffle(thrice);
    for (std::size_t s = 0; s < 3; ++s)
      if (thrice.features[s] != rows[s]) ++bad;
  }
  const double secs = seconds_since(t0);
  report(5, bad == 0 && secs < 10.0, "shuffle algebra",
         std::to_string(cases) + " exhaustive cases over N <= 12, k <= 4, " + std::to_string(bad) + " violations, " +
             fmt("%.2f s", secs) + " (< 10 s)");
}

// -- 6 ------------------------------------------------------------------------

void prototype_dynamics() {
  const int zeta = 3;
  const Eigen::Index dim = 5;
  const double momentum = 0.9;
  PrototypeBank bank(zeta, dim, momentum);
  // Oracle state: per modality, per (label, polarity) row, plus an initialized flag.
  std::array<Mat, 3> mu;
  std::array<std::vector<bool>, 3> init;
  for (auto& m : mu) m = Mat::Zero(2 * zeta, dim);
  for (auto& f : init) f.assign(2 * zeta, false);
  double worst = 0.0, worst_norm = 0.0;
  for (int step = 0; step < 50; ++step) {
    for (Modality m : kCoreModalities) {
      const auto mi = static_cast<std::size_t>(core_index(m));
      Mat emb = random_mat(6, dim, 1000 + 7 * step + mi);
      for (Eigen::Index i = 0; i < emb.rows(); ++i) emb.row(i).normalize();
      const Mat y = test::random_binary(6, zeta, 2000 + 7 * step + mi, 0.4);
      bank.update(m, emb, y);
      for (int j = 0; j < zeta; ++j)
        for (int k = 0; k < 2; ++k) {
          RowVec sum = RowVec::Zero(dim);
          int count = 0;
          for (Eigen::Index i = 0; i < emb.rows(); ++i)
            if ((y(i, j) > 0.5) == (k == 0)) {
              sum += emb.row(i);
              ++count;
            }
          if (count == 0) continue;
          const RowVec mean = sum / count;
          const auto row = static_cast<Eigen::Index>(2 * j + k);
          const RowVec next = init[mi][static_cast<std::size_t>(row)] ? RowVec(momentum * mu[mi].row(row) + (1 - momentum) * mean)
                                                                      : mean;
          mu[mi].row(row) = next.normalized();
          init[mi][static_cast<std::size_t>(row)] = true;
        }
      for (int j = 0; j < zeta; ++j)
        for (int k = 0; k < 2; ++k) {
          const auto row = static_cast<Eigen::Index>(2 * j + k);
          if (!init[mi][static_cast<std::size_t>(row)]) continue;
          const RowVec got = bank.prototype(m, j, k == 0 ? Polarity::Pos : Polarity::Neg);
          worst = std::max(worst, (got - mu[mi].row(row)).cwiseAbs().maxCoeff());
          worst_norm = std::max(worst_norm, std::abs(got.norm() - 1.0));
        }
    }
  }
  report(6, worst <= 1e-6 && worst_norm <= 1e-6, "prototype dynamics",
         "50 steps x 3 modalities, max deviation from unrolled recurrence " + fmt("%.2e", worst) +
             " (<= 1e-6), max |norm - 1| " + fmt("%.2e", worst_norm));
}

// -- 7, 8, 10 ---------------------------------------------------------------

// Recovers the latent factors of each test sample from its observed target
// features by least squares, then applies the generator's label rule.
double bayes_oracle_f1(const Corpus& corpus, const GenConfig& g, const GenerationTrace& trace) {
  const int dc = g.d_common, ds = g.d_specific;
  int rows = 0;
  for (Modality m : kCoreModalities) rows += g.feature_dims.at(m);
  Mat a = Mat::Zero(rows, dc + 3 * ds);
  int r0 = 0;
  for (Modality m : kCoreModalities) {
    const int d = g.feature_dims.at(m);
    a.block(r0, 0, d, dc) = trace.common_proj.at(m);
    a.block(r0, dc + core_index(m) * ds, d, ds) = trace.specific_proj.at(m);
    r0 += d;
  }
  const auto qr = a.colPivHouseholderQr();
  const auto idx = corpus.split_indices(Split::Test);
  Mat pred(static_cast<Eigen::Index>(idx.size()), corpus.zeta), gold = pred;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const ClipSample& s = corpus.samples[static_cast<std::size_t>(idx[i])];
    Eigen::VectorXd x(rows);
    r0 = 0;
    for (Modality m : kCoreModalities) {
      const FeatureBlock& b = s.features.at(BlockKey{m, s.target_person, s.target_segment});
      for (int k = 0; k < b.cols; ++k) x(r0 + k) = b.data[static_cast<std::size_t>(k)];
      r0 += b.cols;
    }
    const Eigen::VectorXd sol = qr.solve(x);
    std::map<Modality, Eigen::VectorXd> spec;
    for (Modality m : kCoreModalities) spec[m] = sol.segment(dc + core_index(m) * ds, ds);
    const auto labels = latent_labels(g, trace, sol.head(dc), spec);
    for (int j = 0; j < corpus.zeta; ++j) {
      pred(static_cast<Eigen::Index>(i), j) = labels[static_cast<std::size_t>(j)];
      gold(static_cast<Eigen::Index>(i), j) = s.labels[static_cast<std::size_t>(j)];
    }
  }
  return compute_metrics(pred, gold).micro_f1;
}

void adversarial_learnability_correlation() {
  const auto t0 = Clock::now();
  double acc_c = 0.0, acc_s = 0.0, f1 = 0.0, f1_min = 1.0, bayes_min = 1.0;
  int tied_hits = 0;
  std::string argmaxes;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    GenConfig g;
    g.n_samples = 2000;
    g.seed = seed;
    GenerationTrace trace;
    const Corpus corpus = generate_synthetic(g, &trace);
    TrainConfig cfg;
    cfg.seed = seed;
    auto state = fit(corpus, cfg);
    const auto acc = discriminator_accuracy(*state->model, corpus, corpus.split_indices(Split::Test));
    acc_c += acc.on_common / 3.0;
    acc_s += acc.on_specific / 3.0;
    const double f = evaluate(*state->model, corpus).micro_f1;
    f1 += f / 3.0;
    f1_min = std::min(f1_min, f);
    bayes_min = std::min(bayes_min, bayes_oracle_f1(corpus, g, trace));
    const Mat corr = modality_label_correlation(*state->model, corpus);
    Eigen::Index arg = 0;
    corr.row(g.modality_tied_label->label).maxCoeff(&arg);
    const Modality planted = g.modality_tied_label->modality;
    if (arg == core_index(planted)) ++tied_hits;
    argmaxes += std::string(argmaxes.empty() ? "" : ",") + std::string(modality_name(kCoreModalities[arg]));
  }
  const double secs = seconds_since(t0);
  report(7, acc_c <= 0.45 && acc_s >= 0.80 && secs <= 600.0, "adversarial behavior",
         "discriminator accuracy on commonality " + fmt("%.3f", acc_c) + " (<= 0.45), on specificity " +
             fmt("%.3f", acc_s) + " (>= 0.80), 3-seed mean, N=2000, 30 epochs, " + fmt("%.0f s", secs) +
             " (<= 600 s)");
  report(8, f1 >= 0.85 && bayes_min >= 0.95, "learnability",
         "held-out micro-F1 " + fmt("%.3f", f1) + " (>= 0.85, min seed " + fmt("%.3f", f1_min) +
             "), Bayes oracle from observed features " + fmt("%.3f", bayes_min) + " (>= 0.95)");
  report(10, tied_hits == 3, "modality-to-label correlation",
         "tied label argmax at the planted modality in " + std::to_string(tied_hits) + "/3 seeds (" + argmaxes +
             ", need 3/3)");
}

// -- 9 ------------------------------------------------------------------------

void ablation_direction() {
  const auto t0 = Clock::now();
  GenConfig g;
  g.n_samples = 2000;
  g.seed = 1;
  const Corpus corpus = generate_synthetic(g);
  TrainConfig cfg;
  cfg.dropout.p_nonspeaker_drop = 0.5;
  EvalOptions eval;
  eval.corruption.p_nonspeaker_drop = 0.5;
  const AblationTable table =
      run_ablation(corpus, cfg,
                   {variant_from_name("no_Xbeta_Xgamma"), variant_from_name("no_C"), variant_from_name("no_S")},
                   {1, 2, 3}, eval);
  const double full = table.row("full").summary.at("micro_f1").mean;
  const double no_rec = table.row("no_Xbeta_Xgamma").summary.at("micro_f1").mean;
  const double no_c = table.row("no_C").summary.at("micro_f1").mean;
  const double no_s = table.row("no_S").summary.at("micro_f1").mean;
  const double secs = seconds_since(t0);
  report(9, full - no_rec >= 0.03 && full > no_c && full > no_s && secs <= 2400.0, "ablation direction",
         "50% non-speaker dropout, 3-seed mean micro-F1: full " + fmt("%.3f", full) + ", no_Xbeta_Xgamma " +
             fmt("%.3f", no_rec) + " (gap " + fmt("%.3f", full - no_rec) + " >= 0.03), no_C " + fmt("%.3f", no_c) +
             ", no_S " + fmt("%.3f", no_s) + " (both below full), " + fmt("%.0f s", secs) + " (<= 2400 s)");
}

// -- 11 -----------------------------------------------------------------------

void determinism() {
  GenConfig g;
  g.n_samples = 400;
  g.seed = 11;
  const Corpus corpus = generate_synthetic(g);
  TrainConfig cfg;
  cfg.seed = 11;
  cfg.epochs = 6;
  cfg.dropout.p_nonspeaker_drop = 0.5;
  cfg.encoder.dropout_rate = 0.1;

  auto run = [&]() {
    auto state = fit(corpus, cfg);
    return std::make_pair(metrics_to_json(evaluate(*state->model, corpus)).dump(2), checkpoint_bytes(*state));
  };
  const auto [report_a, ckpt_a] = run();
  const auto [report_b, ckpt_b] = run();

  TrainState first(cfg, ModelShape::of(corpus));
  train_epochs(first, corpus, 3);
  auto resumed = checkpoint_from_bytes(checkpoint_bytes(first));
  train_epochs(*resumed, corpus, 3);
  const std::string report_r = metrics_to_json(evaluate(*resumed->model, corpus)).dump(2);

  const bool same_report = report_a == report_b;
  const bool same_ckpt = ckpt_a == ckpt_b;
  const bool resume_ok = checkpoint_bytes(*resumed) == ckpt_a && report_r == report_a;
  report(11, same_report && same_ckpt && resume_ok, "determinism",
         std::string("repeat run report ") + (same_report ? "byte-identical" : "differs") + ", checkpoint " +
             (same_ckpt ? "byte-identical" : "differs") + ", 3+3 epoch resume " +
             (resume_ok ? "equals" : "differs from") + " 6 uninterrupted epochs");
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto want = [&](int id) { return only.empty() || only.contains(id); };
  const std::vector<std::pair<std::set<int>, std::function<void()>>> criteria = {
      {{1}, loss_identities},
      {{2}, gradient_checks},
      {{3}, closed_forms},
      {{4}, metric_oracle},
      {{5}, shuffle_algebra},
      {{6}, prototype_dynamics},
      {{7, 8, 10}, adversarial_learnability_correlation},
      {{9}, ablation_direction},
      {{11}, determinism},
  };
  for (const auto& [ids, fn] : criteria) {
    bool run = false;
    for (int id : ids) run = run || want(id);
    if (!run) continue;
    std::cerr << "running criterion";
    for (int id : ids) std::cerr << " " << id;
    std::cerr << std::endl;
    try {
      fn();
    } catch (const std::exception& e) {
      for (int id : ids) report(id, false, "criterion", std::string("exception: ") + e.what());
    }
  }
  int failures = 0;
  for (const auto& [id, r] : results) {
    std::cout << (r.first ? "[PASS] " : "[FAIL] ") << id << " " << r.second << "\n";
    failures += r.first ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
