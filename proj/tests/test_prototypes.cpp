// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ramer/errors.hpp"
#include "ramer/prototypes.hpp"
#include "support.hpp"

#include <cmath>
#include <numeric>

using namespace ramer;
using test::random_mat;

namespace {

Mat normalized(Mat m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).normalize();
  return m;
}

RowVec vec2(double a, double b) {
  RowVec v(2);
  v << a, b;
  return v;
}

// Direct transcription of the contrastive objective with explicit loops.
double supcon_oracle(const Mat& z, const Mat& y, double eta, bool exact) {
  const Eigen::Index n = z.rows();
  double total = 0.0;
  int anchors = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double denom = 0.0;
    for (Eigen::Index r = 0; r < n; ++r)
      if (r != i) denom += std::exp(z.row(i).dot(z.row(r)) / eta);
    double acc = 0.0;
    int np = 0;
    for (Eigen::Index p = 0; p < n; ++p) {
      if (p == i) continue;
      bool positive;
      if (exact) {
        positive = y.row(i) == y.row(p);
      } else {
        positive = false;
        for (Eigen::Index j = 0; j < y.cols(); ++j) positive = positive || (y(i, j) > 0.5 && y(p, j) > 0.5);
      }
      if (!positive) continue;
      acc += -std::log(std::exp(z.row(i).dot(z.row(p)) / eta) / denom);
      ++np;
    }
    if (np == 0) continue;
    total += acc / np;
    ++anchors;
  }
  return anchors == 0 ? 0.0 : total / anchors;
}

double supcon_value(const Mat& z, const Mat& y, double eta, PositiveRule rule = PositiveRule::ShareAny) {
  ad::Tape t;
  return supcon_loss(t.constant(z), y, eta, rule).scalar();
}

}  // namespace

TEST_CASE("bank construction validates its arguments") {
  CHECK_THROWS_AS(PrototypeBank(0, 4, 0.9), ConfigError);
  CHECK_THROWS_AS(PrototypeBank(3, 0, 0.9), ConfigError);
  CHECK_THROWS_AS(PrototypeBank(3, 4, 1.5), ConfigError);
  PrototypeBank b(3, 4, 0.9);
  CHECK_FALSE(b.initialized(Modality::Visual, 0, Polarity::Pos));
  CHECK_FALSE(b.complete(Modality::Visual));
}

TEST_CASE("first update stores the normalized mean; empty cells stay untouched") {
  PrototypeBank b(2, 3, 0.9);
  const Mat z = normalized(random_mat(4, 3, 1));
  Mat y(4, 2);
  y << 1, 0, 1, 0, 0, 0, 1, 0;
  b.update(Modality::Textual, z, y);
  const RowVec pos0 = ((z.row(0) + z.row(1) + z.row(3)) / 3.0).normalized();
  CHECK(b.prototype(Modality::Textual, 0, Polarity::Pos).isApprox(pos0, 1e-14));
  CHECK(b.prototype(Modality::Textual, 0, Polarity::Neg).isApprox(z.row(2), 1e-14));
  CHECK_FALSE(b.initialized(Modality::Textual, 1, Polarity::Pos));
  CHECK(b.initialized(Modality::Textual, 1, Polarity::Neg));
  CHECK_FALSE(b.initialized(Modality::Visual, 0, Polarity::Pos));
  CHECK_THROWS_AS(b.update(Modality::Textual, Mat::Zero(4, 2), y), DataError);
  CHECK_THROWS_AS(b.update(Modality::Textual, z, Mat::Zero(3, 2)), DataError);
}

TEST_CASE("momentum edge cases") {
  const Mat z1 = normalized(random_mat(6, 4, 2)), z2 = normalized(random_mat(6, 4, 3));
  const Mat y = test::random_binary(6, 3, 4);
  SUBCASE("momentum 1 keeps initialized cells") {
    PrototypeBank b(3, 4, 1.0);
    b.update(Modality::Acoustic, z1, y);
    const Mat before = b.table(Modality::Acoustic);
    b.update(Modality::Acoustic, z2, y);
    CHECK(b.table(Modality::Acoustic).isApprox(before, 1e-15));
  }
  SUBCASE("momentum 0 tracks the latest normalized batch mean") {
    PrototypeBank b(3, 4, 0.0);
    b.update(Modality::Acoustic, z1, y);
    b.update(Modality::Acoustic, z2, y);
    for (int j = 0; j < 3; ++j) {
      RowVec sum = RowVec::Zero(4);
      int count = 0;
      for (Eigen::Index i = 0; i < 6; ++i)
        if (y(i, j) > 0.5) {
          sum += z2.row(i);
          ++count;
        }
      if (count > 0) CHECK(b.prototype(Modality::Acoustic, j, Polarity::Pos).isApprox(sum.normalized(), 1e-14));
    }
  }
}

TEST_CASE("50 momentum updates follow the unrolled recurrence") {
  PrototypeBank b(1, 3, 0.9);
  Mat y = Mat::Ones(5, 1);
  const Mat start = normalized(random_mat(5, 3, 5));
  const Mat stream = normalized(random_mat(5, 3, 6));
  b.update(Modality::Visual, start, y);
  RowVec mu = start.colwise().mean().normalized();
  const RowVec target = stream.colwise().mean();
  const RowVec target_dir = target.normalized();
  double prev = (mu - target_dir).norm();
  const double first = prev;
  for (int step = 0; step < 50; ++step) {
    b.update(Modality::Visual, stream, y);
    mu = (0.9 * mu + 0.1 * target).normalized();
    CHECK(b.prototype(Modality::Visual, 0, Polarity::Pos).isApprox(mu, 1e-12));
    CHECK(b.prototype(Modality::Visual, 0, Polarity::Pos).norm() == doctest::Approx(1.0).epsilon(1e-6));
    const double d = (mu - target_dir).norm();
    CHECK(d <= prev + 1e-15);
    prev = d;
  }
  // Geometric decay: the per-step ratio settles near 0.9 / (0.9 + 0.1 |mean|).
  const double ratio = std::pow(prev / first, 1.0 / 50.0);
  const double expect = 0.9 / (0.9 + 0.1 * target.norm());
  CHECK(ratio == doctest::Approx(expect).epsilon(0.02));
  CHECK(ratio < 1.0);
}

TEST_CASE("bank update ignores gradients and restores exactly") {
  PrototypeBank a(2, 3, 0.9), b(2, 3, 0.9);
  const Mat z = normalized(random_mat(4, 3, 7));
  const Mat y = test::random_binary(4, 2, 8);
  a.update(Modality::Visual, z, y);
  for (Modality m : kCoreModalities) b.restore(m, a.table(m), a.init_flags(m));
  CHECK(a == b);
  CHECK_THROWS_AS(b.restore(Modality::Visual, Mat::Zero(3, 3), a.init_flags(Modality::Visual)), DataError);
}

TEST_CASE("polarity attention values") {
  PrototypeBank b(1, 2, 0.9);
  b.set_prototype(Modality::Visual, 0, Polarity::Pos, vec2(1, 0));
  b.set_prototype(Modality::Visual, 0, Polarity::Neg, vec2(0, 1));
  const auto equal = attend_polarity(vec2(1, 1), b, Modality::Visual);
  CHECK(equal.weights(0, 0) == doctest::Approx(0.5));
  CHECK(equal.delta.row(0).isApprox(vec2(0.5, 0.5), 1e-15));

  const auto skew = attend_polarity(vec2(2, 0), b, Modality::Visual);
  CHECK(skew.weights(0, 0) == doctest::Approx(std::exp(2.0) / (std::exp(2.0) + 1.0)).epsilon(1e-12));
  CHECK(skew.weights(0, 0) == doctest::Approx(0.8808).epsilon(1e-4));

  PrototypeBank empty(1, 2, 0.9);
  CHECK_THROWS_AS(attend_polarity(vec2(1, 0), empty, Modality::Visual), DataError);
}

TEST_CASE("polarity attention is a convex combination for random banks") {
  PrototypeBank b(4, 5, 0.9);
  for (Modality m : kCoreModalities) b.update(m, normalized(random_mat(30, 5, 9)), test::random_binary(30, 4, 10));
  REQUIRE(b.complete(Modality::Textual));
  for (int trial = 0; trial < 20; ++trial) {
    const RowVec z = normalized(random_mat(1, 5, 100 + static_cast<std::uint64_t>(trial))).row(0);
    const auto a = attend_polarity(z, b, Modality::Textual);
    for (int j = 0; j < 4; ++j) {
      const double op = a.weights(j, 0), on = a.weights(j, 1);
      CHECK(op + on == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(op >= 0.0);
      CHECK(on >= 0.0);
      const RowVec mp = b.prototype(Modality::Textual, j, Polarity::Pos);
      const RowVec mn = b.prototype(Modality::Textual, j, Polarity::Neg);
      CHECK(a.delta.row(j).isApprox(op * mp + on * mn, 1e-13));
    }
  }

  // The tape version matches the plain version row by row and is differentiable in z.
  const Mat zs = normalized(random_mat(3, 5, 11));
  ad::Tape t;
  const Mat dv = attend_polarity(t, t.constant(zs), b, Modality::Acoustic).value();
  REQUIRE(dv.cols() == 20);
  for (Eigen::Index i = 0; i < 3; ++i) {
    const auto a = attend_polarity(RowVec(zs.row(i)), b, Modality::Acoustic);
    for (int j = 0; j < 4; ++j) CHECK(dv.block(i, 5 * j, 1, 5).isApprox(a.delta.row(j), 1e-13));
  }
  ParameterStore s;
  Parameter& zp = s.add("z", random_mat(3, 5, 12));
  CHECK(test::gradient_error({&zp}, [&](ad::Tape& tp) {
          return ad::sum_all(ad::square(attend_polarity(tp, ad::l2_normalize_rows(tp.param(zp)), b, Modality::Visual)));
        }) < 1e-6);
}

TEST_CASE("intrinsic head") {
  ParameterStore s;
  nn::Rng rng(13);
  IntrinsicHead h(s, 3, 4, 2, rng);
  ad::Tape t;
  for (Modality m : kCoreModalities) {
    h.projection(m).bias().value.setZero();
    const Mat out = h(t, m, t.constant(Mat::Zero(5, 12))).value();
    CHECK(out.rows() == 5);
    CHECK(out.cols() == 2);
    CHECK(out.isZero(0.0));
  }
  Parameter& deltas = s.add("deltas", random_mat(2, 12, 14));
  std::vector<Parameter*> params;
  for (auto& p : s.all()) params.push_back(&p);
  CHECK(test::gradient_error(params, [&](ad::Tape& tp) {
          return ad::sum_all(ad::tanh(h(tp, Modality::Visual, tp.param(deltas))));
        }) < 1e-6);
}

TEST_CASE("supcon hand examples") {
  Mat y2(2, 1);
  y2 << 1, 1;
  Mat z2(2, 2);
  z2 << 1, 0, 1, 0;
  CHECK(supcon_value(z2, y2, 1.0) == doctest::Approx(0.0).epsilon(1e-15));

  Mat z3(3, 2), y3(3, 2);
  z3 << 1, 0, 1, 0, 0, 1;
  y3 << 1, 0, 1, 0, 0, 1;
  CHECK(supcon_value(z3, y3, 1.0) == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0))).epsilon(1e-12));
  CHECK(supcon_value(z3, y3, 1.0) == doctest::Approx(0.3133).epsilon(1e-4));

  // High temperature: every anchor tends to log |A(i)|.
  const Mat z = normalized(random_mat(7, 4, 15));
  const Mat y = Mat::Ones(7, 2);
  CHECK(std::abs(supcon_value(z, y, 1e6) - std::log(6.0)) < 1e-3);

  // No anchor with a positive: zero.
  Mat yn = Mat::Zero(3, 2);
  CHECK(supcon_value(z3, yn, 1.0) == 0.0);

  ad::Tape t;
  CHECK_THROWS_AS(supcon_loss(t.constant(Mat::Ones(1, 2)), Mat::Ones(1, 1), 1.0), DataError);
  CHECK_THROWS_AS(supcon_loss(t.constant(z3), y3, 0.0), ConfigError);
  CHECK_THROWS_AS(supcon_loss(t.constant(z3), y3, -1.0), ConfigError);
}

TEST_CASE("supcon matches the loop oracle on random sets") {
  for (int trial = 0; trial < 20; ++trial) {
    const auto seed = static_cast<std::uint64_t>(200 + trial);
    const Eigen::Index n = 3 + trial % 9;
    const Mat z = normalized(random_mat(n, 5, seed));
    const Mat y = test::random_binary(n, 4, seed + 1000, 0.4);
    const double eta = 0.05 + 0.1 * (trial % 5);
    CHECK(supcon_value(z, y, eta) == doctest::Approx(supcon_oracle(z, y, eta, false)).epsilon(1e-10));
    CHECK(supcon_value(z, y, eta, PositiveRule::ExactMatch) ==
          doctest::Approx(supcon_oracle(z, y, eta, true)).epsilon(1e-10));
  }
}

TEST_CASE("supcon is permutation invariant") {
  const Mat z = normalized(random_mat(9, 4, 16));
  const Mat y = test::random_binary(9, 3, 17);
  std::vector<int> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[0], perm[4]);
  Mat zp(9, 4), yp(9, 3);
  for (int i = 0; i < 9; ++i) {
    zp.row(i) = z.row(perm[static_cast<std::size_t>(i)]);
    yp.row(i) = y.row(perm[static_cast<std::size_t>(i)]);
  }
  CHECK(supcon_value(zp, yp, 0.1) == doctest::Approx(supcon_value(z, y, 0.1)).epsilon(1e-12));
}

TEST_CASE("supcon decreases as a positive pair aligns") {
  Mat y(4, 2);
  y << 1, 0, 1, 0, 0, 1, 0, 1;
  double prev = std::numeric_limits<double>::infinity();
  for (int step = 0; step <= 10; ++step) {
    const double angle = 1.5 - 0.15 * step;
    // Negatives live in the orthogonal complement, so only the positive similarity moves.
    Mat z = Mat::Zero(4, 4);
    z(0, 0) = 1;
    z(1, 0) = std::cos(angle);
    z(1, 1) = std::sin(angle);
    z(2, 2) = 1;
    z(3, 2) = 0.6;
    z(3, 3) = 0.8;
    const double v = supcon_value(z, y, 0.5);
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("supcon gradient through normalization") {
  ParameterStore s;
  Parameter& raw = s.add("z", random_mat(8, 4, 18));
  const Mat y = test::random_binary(8, 3, 19);
  for (PositiveRule rule : {PositiveRule::ShareAny, PositiveRule::ExactMatch})
    CHECK(test::gradient_error({&raw}, [&](ad::Tape& t) {
            return supcon_loss(ad::l2_normalize_rows(t.param(raw)), y, 0.1, rule);
          }) < 1e-4);
}

TEST_CASE("positive pair predicate") {
  Mat y(3, 3);
  y << 1, 1, 0, 0, 1, 0, 1, 1, 0;
  CHECK(is_positive_pair(y, 0, 1, PositiveRule::ShareAny));
  CHECK_FALSE(is_positive_pair(y, 0, 1, PositiveRule::ExactMatch));
  CHECK(is_positive_pair(y, 0, 2, PositiveRule::ExactMatch));
  Mat none = Mat::Zero(2, 3);
  CHECK_FALSE(is_positive_pair(none, 0, 1, PositiveRule::ShareAny));
}
