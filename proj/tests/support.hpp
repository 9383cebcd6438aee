// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared test helpers: finite-difference gradient checks and fixtures.

#pragma once

#include "ramer/autodiff.hpp"
#include "ramer/corpus.hpp"
#include "ramer/metrics.hpp"
#include "ramer/random.hpp"
#include "ramer/trainer.hpp"

#include <cmath>
#include <deque>
#include <functional>
#include <set>
#include <vector>

namespace ramer::test {

inline Mat random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  random::Engine rng(seed);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * random::normal(rng);
  return m;
}

inline Mat random_binary(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double p = 0.5) {
  random::Engine rng(seed);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = random::bernoulli(rng, p) ? 1.0 : 0.0;
  return m;
}

using LossFn = std::function<ad::Var(ad::Tape&)>;

inline double eval_loss(const LossFn& f) {
  ad::Tape tape;
  return f(tape).scalar();
}

/// ||analytic - numeric|| / (||analytic|| + ||numeric||) over every entry of
/// `params` (or the sampled subset in `probe`). Central differences with step h.
inline double gradient_error(const std::vector<Parameter*>& params, const LossFn& f, double h = 1e-6,
                             const std::vector<std::pair<Parameter*, Eigen::Index>>* probe = nullptr) {
  for (Parameter* p : params) p->zero_grad();
  {
    ad::Tape tape;
    tape.backward(f(tape));
  }
  std::vector<double> analytic, numeric;
  auto check_entry = [&](Parameter* p, Eigen::Index i) {
    const double saved = p->value.data()[i];
    p->value.data()[i] = saved + h;
    const double up = eval_loss(f);
    p->value.data()[i] = saved - h;
    const double down = eval_loss(f);
    p->value.data()[i] = saved;
    analytic.push_back(p->grad.data()[i]);
    numeric.push_back((up - down) / (2.0 * h));
  };
  if (probe != nullptr) {
    for (const auto& [p, i] : *probe) check_entry(p, i);
  } else {
    for (Parameter* p : params)
      for (Eigen::Index i = 0; i < p->value.size(); ++i) check_entry(p, i);
  }
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::sqrt(na) + std::sqrt(nn);
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

inline GenConfig small_gen_config(int n, std::uint64_t seed) {
  GenConfig g;
  g.n_samples = n;
  g.seed = seed;
  return g;
}

/// A model small enough for step-level tests.
inline TrainConfig tiny_config(std::uint64_t seed = 1) {
  TrainConfig c;
  c.encoder.d_model = 8;
  c.encoder.n_heads = 2;
  c.batch_size = 16;
  c.epochs = 2;
  c.seed = seed;
  return c;
}

// Definitional metrics computed from per-sample label sets.
inline MetricsReport metrics_oracle(const Mat& pred, const Mat& gold) {
  MetricsReport r;
  const int n = static_cast<int>(pred.rows()), z = static_cast<int>(pred.cols());
  r.per_label.resize(static_cast<std::size_t>(z));
  double jac = 0.0;
  int exact = 0;
  for (int i = 0; i < n; ++i) {
    std::set<int> p, g, both, either;
    for (int j = 0; j < z; ++j) {
      if (pred(i, j) == 1.0) p.insert(j);
      if (gold(i, j) == 1.0) g.insert(j);
    }
    for (int j : p) (g.count(j) ? both : either).insert(j);
    for (int j : g) either.insert(j);
    for (int j : both) either.insert(j);
    jac += either.empty() ? 1.0 : static_cast<double>(both.size()) / static_cast<double>(either.size());
    exact += p == g ? 1 : 0;
    for (int j = 0; j < z; ++j) {
      auto& c = r.per_label[static_cast<std::size_t>(j)];
      c.tp += (p.count(j) && g.count(j)) ? 1 : 0;
      c.fp += (p.count(j) && !g.count(j)) ? 1 : 0;
      c.fn += (!p.count(j) && g.count(j)) ? 1 : 0;
    }
  }
  r.acc = r.acc_jaccard = n == 0 ? 0.0 : jac / n;
  r.acc_subset = n == 0 ? 0.0 : static_cast<double>(exact) / n;
  long tp = 0, fp = 0, fn = 0, sup = 0;
  double macro = 0.0, weighted = 0.0;
  for (const auto& c : r.per_label) {
    tp += c.tp;
    fp += c.fp;
    fn += c.fn;
    const double prec = c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    const double rec = c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    const double f = prec + rec == 0.0 ? 0.0 : 2.0 * prec * rec / (prec + rec);
    macro += f;
    weighted += f * static_cast<double>(c.tp + c.fn);
    sup += c.tp + c.fn;
  }
  r.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  r.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  r.micro_f1 = r.precision + r.recall == 0.0 ? 0.0 : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  r.macro_f1 = z == 0 ? 0.0 : macro / z;
  r.weighted_f1 = sup == 0 ? 0.0 : weighted / static_cast<double>(sup);
  return r;
}

// Literal stack simulation: split into contiguous stacks, pop the top and
// append it `pops` times per stack.
inline std::vector<int> pop_append_oracle(int n, int k, int pops) {
  std::vector<int> out;
  const int base = n / k, extra = n % k;
  int start = 0;
  for (int s = 0; s < k; ++s) {
    const int size = base + (s < extra ? 1 : 0);
    std::deque<int> stack;
    for (int i = 0; i < size; ++i) stack.push_back(start + i);
    for (int p = 0; p < pops; ++p) {
      stack.push_back(stack.front());
      stack.pop_front();
    }
    out.insert(out.end(), stack.begin(), stack.end());
    start += size;
  }
  return out;
}

}  // namespace ramer::test
