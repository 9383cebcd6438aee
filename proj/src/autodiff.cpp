// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0

#include "ramer/autodiff.hpp"

#include "ramer/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ramer {

Parameter& ParameterStore::add(std::string name, Mat init) {
  if (find(name) != nullptr) throw ConfigError("duplicate parameter name: " + name);
  Parameter p;
  p.name = std::move(name);
  p.value = std::move(init);
  p.zero_grad();
  params_.push_back(std::move(p));
  return params_.back();
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

namespace ad {

const Mat& Var::value() const { return tape->value(id); }

Var Tape::push(Mat value, bool requires_grad, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Mat value) { return push(std::move(value), false, nullptr); }

Var Tape::param(Parameter& p) {
  Parameter* ptr = &p;
  return push(p.value, true, [ptr](Tape&, const Mat& g) { ptr->grad += g; });
}

void Tape::accumulate(int id, const Mat& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

Mat Tape::grad(int id) const {
  const Node& n = nodes_[id];
  if (!n.has_grad) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var out) {
  if (out.tape != this || out.rows() != 1 || out.cols() != 1)
    throw ConfigError("backward() requires a 1x1 output on this tape");
  for (auto& n : nodes_) n.has_grad = false;
  accumulate(out.id, Mat::Ones(1, 1));
  for (int i = out.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.has_grad || !n.backward) continue;
    // Copy: the callback may append to other nodes' grads but never to its own.
    const Mat g = n.grad;
    n.backward(*this, g);
  }
}

namespace {

bool any_grad(std::initializer_list<Var> vs) {
  for (const auto& v : vs)
    if (v.tape->requires_grad(v.id)) return true;
  return false;
}

void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ConfigError("operands live on different tapes");
}

void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DataError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                    std::to_string(b.cols()));
}

}  // namespace

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  const Mat& av = a.value();
  const Mat& bv = b.value();
  if (av.cols() != bv.rows())
    throw DataError("matmul: inner dimension mismatch " + std::to_string(av.cols()) + " vs " +
                    std::to_string(bv.rows()));
  const int ia = a.id, ib = b.id;
  return a.tape->push(av * bv, any_grad({a, b}), [ia, ib](Tape& t, const Mat& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var add(Var a, Var b) {
  check_same_tape(a, b);
  check_same_shape(a.value(), b.value(), "add");
  const int ia = a.id, ib = b.id;
  return a.tape->push(a.value() + b.value(), any_grad({a, b}), [ia, ib](Tape& t, const Mat& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  check_same_shape(a.value(), b.value(), "sub");
  const int ia = a.id, ib = b.id;
  return a.tape->push(a.value() - b.value(), any_grad({a, b}), [ia, ib](Tape& t, const Mat& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

Var hadamard(Var a, Var b) {
  check_same_tape(a, b);
  check_same_shape(a.value(), b.value(), "hadamard");
  const int ia = a.id, ib = b.id;
  return a.tape->push(a.value().cwiseProduct(b.value()), any_grad({a, b}),
                      [ia, ib](Tape& t, const Mat& g) {
                        if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                        if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                      });
}

Var scale(Var a, double s) {
  const int ia = a.id;
  return a.tape->push(a.value() * s, any_grad({a}),
                      [ia, s](Tape& t, const Mat& g) { t.accumulate(ia, g * s); });
}

Var transpose(Var a) {
  const int ia = a.id;
  return a.tape->push(a.value().transpose(), any_grad({a}),
                      [ia](Tape& t, const Mat& g) { t.accumulate(ia, g.transpose()); });
}

Var add_row(Var a, Var row) {
  check_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw DataError("add_row: bias width mismatch");
  const int ia = a.id, ir = row.id;
  Mat out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape->push(std::move(out), any_grad({a, row}), [ia, ir](Tape& t, const Mat& g) {
    t.accumulate(ia, g);
    if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
  });
}

Var relu(Var a) {
  const int ia = a.id;
  return a.tape->push(a.value().cwiseMax(0.0), any_grad({a}), [ia](Tape& t, const Mat& g) {
    t.accumulate(ia, (t.value(ia).array() > 0.0).cast<double>().matrix().cwiseProduct(g));
  });
}

Var tanh(Var a) {
  const int ia = a.id;
  Mat out = a.value().array().tanh().matrix();
  const int out_id = static_cast<int>(a.tape->size());
  return a.tape->push(std::move(out), any_grad({a}), [ia, out_id](Tape& t, const Mat& g) {
    const Mat& y = t.value(out_id);
    t.accumulate(ia, g.cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var sigmoid(Var a) {
  const int ia = a.id;
  Mat out = a.value().unaryExpr([](double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  const int out_id = static_cast<int>(a.tape->size());
  return a.tape->push(std::move(out), any_grad({a}), [ia, out_id](Tape& t, const Mat& g) {
    const Mat& y = t.value(out_id);
    t.accumulate(ia, g.cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
  });
}

Var square(Var a) {
  const int ia = a.id;
  return a.tape->push(a.value().array().square().matrix(), any_grad({a}),
                      [ia](Tape& t, const Mat& g) {
                        t.accumulate(ia, 2.0 * g.cwiseProduct(t.value(ia)));
                      });
}

Var sum_all(Var a) {
  const int ia = a.id;
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape->push(Mat::Constant(1, 1, a.value().sum()), any_grad({a}),
                      [ia, r, c](Tape& t, const Mat& g) {
                        t.accumulate(ia, Mat::Constant(r, c, g(0, 0)));
                      });
}

Var mean_all(Var a) {
  const auto n = static_cast<double>(std::max<Eigen::Index>(1, a.value().size()));
  return scale(sum_all(a), 1.0 / n);
}

Var grad_reverse(Var a, double rho) {
  const int ia = a.id;
  return a.tape->push(a.value(), any_grad({a}),
                      [ia, rho](Tape& t, const Mat& g) { t.accumulate(ia, -rho * g); });
}

Var detach(Var a) { return a.tape->constant(a.value()); }

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DataError("concat_cols: no operands");
  Tape* tape = parts.front().tape;
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool rg = false;
  for (const auto& p : parts) {
    check_same_tape(parts.front(), p);
    if (p.rows() != rows) throw DataError("concat_cols: row count mismatch");
    cols += p.cols();
    rg = rg || tape->requires_grad(p.id);
  }
  Mat out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    spans.emplace_back(p.id, off);
    off += p.cols();
  }
  return tape->push(std::move(out), rg, [spans](Tape& t, const Mat& g) {
    for (const auto& [id, start] : spans)
      if (t.requires_grad(id)) t.accumulate(id, g.middleCols(start, t.value(id).cols()));
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DataError("concat_rows: no operands");
  Tape* tape = parts.front().tape;
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  bool rg = false;
  for (const auto& p : parts) {
    check_same_tape(parts.front(), p);
    if (p.cols() != cols) throw DataError("concat_rows: column count mismatch");
    rows += p.rows();
    rg = rg || tape->requires_grad(p.id);
  }
  Mat out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    spans.emplace_back(p.id, off);
    off += p.rows();
  }
  return tape->push(std::move(out), rg, [spans](Tape& t, const Mat& g) {
    for (const auto& [id, start] : spans)
      if (t.requires_grad(id)) t.accumulate(id, g.middleRows(start, t.value(id).rows()));
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw DataError("slice_cols: out of range");
  const int ia = a.id;
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape->push(a.value().middleCols(start, count), any_grad({a}),
                      [ia, r, c, start, count](Tape& t, const Mat& g) {
                        Mat full = Mat::Zero(r, c);
                        full.middleCols(start, count) = g;
                        t.accumulate(ia, full);
                      });
}

Var gather_rows(Var a, const std::vector<int>& index) {
  const Mat& av = a.value();
  Mat out(static_cast<Eigen::Index>(index.size()), av.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= av.rows()) throw DataError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = av.row(index[i]);
  }
  const int ia = a.id;
  const Eigen::Index r = av.rows(), c = av.cols();
  return a.tape->push(std::move(out), any_grad({a}), [ia, r, c, index](Tape& t, const Mat& g) {
    Mat full = Mat::Zero(r, c);
    for (std::size_t i = 0; i < index.size(); ++i) full.row(index[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(ia, full);
  });
}

Var group_max_rows(Var a, const std::vector<std::vector<int>>& groups) {
  const Mat& av = a.value();
  const auto n = static_cast<Eigen::Index>(groups.size());
  Mat out(n, av.cols());
  // argmax[g * cols + c] = source row of the max.
  std::vector<int> argmax(static_cast<std::size_t>(n * av.cols()));
  for (Eigen::Index gi = 0; gi < n; ++gi) {
    const auto& rows = groups[static_cast<std::size_t>(gi)];
    if (rows.empty()) throw DataError("group_max_rows: empty group");
    for (Eigen::Index c = 0; c < av.cols(); ++c) {
      int best = rows.front();
      for (int r : rows)
        if (av(r, c) > av(best, c)) best = r;
      out(gi, c) = av(best, c);
      argmax[static_cast<std::size_t>(gi * av.cols() + c)] = best;
    }
  }
  const int ia = a.id;
  const Eigen::Index r = av.rows(), cols = av.cols();
  return a.tape->push(std::move(out), any_grad({a}),
                      [ia, r, cols, n, argmax = std::move(argmax)](Tape& t, const Mat& g) {
                        Mat full = Mat::Zero(r, cols);
                        for (Eigen::Index gi = 0; gi < n; ++gi)
                          for (Eigen::Index c = 0; c < cols; ++c)
                            full(argmax[static_cast<std::size_t>(gi * cols + c)], c) += g(gi, c);
                        t.accumulate(ia, full);
                      });
}

Var group_mean_rows(Var a, const std::vector<std::vector<int>>& groups) {
  const Mat& av = a.value();
  const auto n = static_cast<Eigen::Index>(groups.size());
  Mat out = Mat::Zero(n, av.cols());
  for (Eigen::Index gi = 0; gi < n; ++gi) {
    const auto& rows = groups[static_cast<std::size_t>(gi)];
    if (rows.empty()) throw DataError("group_mean_rows: empty group");
    for (int r : rows) out.row(gi) += av.row(r);
    out.row(gi) /= static_cast<double>(rows.size());
  }
  const int ia = a.id;
  const Eigen::Index r = av.rows(), cols = av.cols();
  return a.tape->push(std::move(out), any_grad({a}), [ia, r, cols, groups](Tape& t, const Mat& g) {
    Mat full = Mat::Zero(r, cols);
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      const double w = 1.0 / static_cast<double>(groups[gi].size());
      for (int row : groups[gi]) full.row(row) += w * g.row(static_cast<Eigen::Index>(gi));
    }
    t.accumulate(ia, full);
  });
}

Var elementwise_max(const std::vector<Var>& parts) {
  if (parts.empty()) throw DataError("elementwise_max: no operands");
  Tape* tape = parts.front().tape;
  const Mat& first = parts.front().value();
  bool rg = false;
  for (const auto& p : parts) {
    check_same_tape(parts.front(), p);
    check_same_shape(first, p.value(), "elementwise_max");
    rg = rg || tape->requires_grad(p.id);
  }
  Mat out = first;
  std::vector<int> src(static_cast<std::size_t>(first.size()), 0);
  for (std::size_t k = 1; k < parts.size(); ++k) {
    const Mat& v = parts[k].value();
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (v(i) > out(i)) {
        out(i) = v(i);
        src[static_cast<std::size_t>(i)] = static_cast<int>(k);
      }
  }
  std::vector<int> ids;
  for (const auto& p : parts) ids.push_back(p.id);
  return tape->push(std::move(out), rg, [ids, src = std::move(src)](Tape& t, const Mat& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      Mat part = Mat::Zero(g.rows(), g.cols());
      for (Eigen::Index i = 0; i < g.size(); ++i)
        if (src[static_cast<std::size_t>(i)] == static_cast<int>(k)) part(i) = g(i);
      t.accumulate(ids[k], part);
    }
  });
}

Var l2_normalize_rows(Var a) {
  const Mat& av = a.value();
  Eigen::VectorXd norms = av.rowwise().norm().cwiseMax(1e-12);
  Mat out = norms.cwiseInverse().asDiagonal() * av;
  const int ia = a.id;
  const int out_id = static_cast<int>(a.tape->size());
  return a.tape->push(std::move(out), any_grad({a}), [ia, out_id, norms](Tape& t, const Mat& g) {
    const Mat& y = t.value(out_id);
    Eigen::VectorXd proj = (y.cwiseProduct(g)).rowwise().sum();
    Mat dx = g - proj.asDiagonal() * y;
    t.accumulate(ia, norms.cwiseInverse().asDiagonal() * dx);
  });
}

Var row_dot(Var a, Var b) {
  check_same_tape(a, b);
  check_same_shape(a.value(), b.value(), "row_dot");
  const int ia = a.id, ib = b.id;
  Mat out = a.value().cwiseProduct(b.value()).rowwise().sum();
  return a.tape->push(std::move(out), any_grad({a, b}), [ia, ib](Tape& t, const Mat& g) {
    const Eigen::VectorXd gv = g.col(0);
    if (t.requires_grad(ia)) t.accumulate(ia, gv.asDiagonal() * t.value(ib));
    if (t.requires_grad(ib)) t.accumulate(ib, gv.asDiagonal() * t.value(ia));
  });
}

Var row_norm(Var a) {
  const int ia = a.id;
  Mat out = a.value().rowwise().norm();
  const int out_id = static_cast<int>(a.tape->size());
  return a.tape->push(std::move(out), any_grad({a}), [ia, out_id](Tape& t, const Mat& g) {
    const Mat& n = t.value(out_id);
    const Mat& x = t.value(ia);
    Mat dx = Mat::Zero(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      if (n(i, 0) > 0.0) dx.row(i) = (g(i, 0) / n(i, 0)) * x.row(i);
    t.accumulate(ia, dx);
  });
}

Var layer_norm(Var a, Var gain, Var bias, double eps) {
  const Mat& x = a.value();
  const Eigen::Index n = x.rows(), d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d)
    throw DataError("layer_norm: gain/bias width mismatch");
  Mat xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mu) * inv_std(i);
  }
  Mat out = xhat;
  for (Eigen::Index i = 0; i < n; ++i)
    out.row(i) = xhat.row(i).cwiseProduct(gain.value().row(0)) + bias.value().row(0);
  const int ia = a.id, ig = gain.id, ib = bias.id;
  return a.tape->push(std::move(out), any_grad({a, gain, bias}),
                      [ia, ig, ib, xhat, inv_std](Tape& t, const Mat& g) {
                        const Eigen::Index dd = xhat.cols();
                        if (t.requires_grad(ig)) t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
                        if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
                        if (!t.requires_grad(ia)) return;
                        const RowVec gv = t.value(ig).row(0);
                        Mat dx(xhat.rows(), dd);
                        for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
                          const RowVec dxhat = g.row(i).cwiseProduct(gv);
                          const double m1 = dxhat.mean();
                          const double m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
                          dx.row(i) = inv_std(i) * (dxhat.array() - m1 - xhat.row(i).array() * m2).matrix();
                        }
                        t.accumulate(ia, dx);
                      });
}

namespace {

// Softmax weights for one group and head; rows = queries, cols = keys (group order).
Mat group_head_weights(const Mat& q, const Mat& k, const std::vector<int>& rows,
                       const std::vector<std::uint8_t>& key_mask, Eigen::Index c0, Eigen::Index dh) {
  const auto g = static_cast<Eigen::Index>(rows.size());
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat w = Mat::Zero(g, g);
  for (Eigen::Index i = 0; i < g; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < g; ++j) {
      if (!key_mask[static_cast<std::size_t>(rows[j])]) continue;
      const double s = q.row(rows[i]).segment(c0, dh).dot(k.row(rows[j]).segment(c0, dh)) * inv;
      w(i, j) = s;
      mx = std::max(mx, s);
    }
    if (!std::isfinite(mx)) continue;  // no attendable key
    double z = 0.0;
    for (Eigen::Index j = 0; j < g; ++j) {
      if (!key_mask[static_cast<std::size_t>(rows[j])]) {
        w(i, j) = 0.0;
        continue;
      }
      w(i, j) = std::exp(w(i, j) - mx);
      z += w(i, j);
    }
    w.row(i) /= z;
  }
  return w;
}

}  // namespace

Var grouped_attention(Var q, Var k, Var v, const std::vector<std::vector<int>>& groups,
                      const std::vector<std::uint8_t>& key_mask, int heads) {
  check_same_tape(q, k);
  check_same_tape(q, v);
  check_same_shape(q.value(), k.value(), "grouped_attention(q,k)");
  check_same_shape(q.value(), v.value(), "grouped_attention(q,v)");
  const Mat& qv = q.value();
  const Mat& kv = k.value();
  const Mat& vv = v.value();
  if (heads < 1 || qv.cols() % heads != 0) throw ConfigError("grouped_attention: width not divisible by heads");
  if (static_cast<Eigen::Index>(key_mask.size()) != qv.rows()) throw DataError("grouped_attention: mask size mismatch");
  const Eigen::Index dh = qv.cols() / heads;

  // weights[g * heads + h]
  std::vector<Mat> weights;
  weights.reserve(groups.size() * static_cast<std::size_t>(heads));
  Mat out = Mat::Zero(qv.rows(), qv.cols());
  for (const auto& rows : groups) {
    for (int h = 0; h < heads; ++h) {
      const Eigen::Index c0 = h * dh;
      Mat w = group_head_weights(qv, kv, rows, key_mask, c0, dh);
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows.size(); ++j) {
          const double a = w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
          if (a != 0.0) out.row(rows[i]).segment(c0, dh) += a * vv.row(rows[j]).segment(c0, dh);
        }
      weights.push_back(std::move(w));
    }
  }
  const int iq = q.id, ik = k.id, iv = v.id;
  return q.tape->push(
      std::move(out), any_grad({q, k, v}),
      [iq, ik, iv, groups, heads, dh, weights = std::move(weights)](Tape& t, const Mat& g) {
        const Mat& qv2 = t.value(iq);
        const Mat& kv2 = t.value(ik);
        const Mat& vv2 = t.value(iv);
        Mat dq = Mat::Zero(qv2.rows(), qv2.cols());
        Mat dk = Mat::Zero(qv2.rows(), qv2.cols());
        Mat dv = Mat::Zero(qv2.rows(), qv2.cols());
        const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
        std::size_t wi = 0;
        for (const auto& rows : groups) {
          const auto gs = static_cast<Eigen::Index>(rows.size());
          for (int h = 0; h < heads; ++h, ++wi) {
            const Mat& w = weights[wi];
            const Eigen::Index c0 = h * dh;
            for (Eigen::Index i = 0; i < gs; ++i) {
              const auto go = g.row(rows[i]).segment(c0, dh);
              Eigen::VectorXd da(gs);
              double dot = 0.0;
              for (Eigen::Index j = 0; j < gs; ++j) {
                da(j) = go.dot(vv2.row(rows[j]).segment(c0, dh));
                dot += w(i, j) * da(j);
                if (w(i, j) != 0.0) dv.row(rows[j]).segment(c0, dh) += w(i, j) * go;
              }
              for (Eigen::Index j = 0; j < gs; ++j) {
                const double ds = w(i, j) * (da(j) - dot) * inv;
                if (ds == 0.0) continue;
                dq.row(rows[i]).segment(c0, dh) += ds * kv2.row(rows[j]).segment(c0, dh);
                dk.row(rows[j]).segment(c0, dh) += ds * qv2.row(rows[i]).segment(c0, dh);
              }
            }
          }
        }
        t.accumulate(iq, dq);
        t.accumulate(ik, dk);
        t.accumulate(iv, dv);
      });
}

Mat attention_weights(const Mat& q, const Mat& k, const std::vector<std::vector<int>>& groups,
                      const std::vector<std::uint8_t>& key_mask, int heads, int head) {
  const Eigen::Index dh = q.cols() / heads;
  Mat full = Mat::Zero(q.rows(), q.rows());
  for (const auto& rows : groups) {
    Mat w = group_head_weights(q, k, rows, key_mask, head * dh, dh);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < rows.size(); ++j)
        full(rows[i], rows[j]) = w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  return full;
}

Var softmax_rows(Var logits) {
  const Mat& x = logits.value();
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mx = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - mx).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  const int ia = logits.id;
  const int out_id = static_cast<int>(logits.tape->size());
  return logits.tape->push(std::move(out), any_grad({logits}), [ia, out_id](Tape& t, const Mat& g) {
    const Mat& y = t.value(out_id);
    Eigen::VectorXd dots = y.cwiseProduct(g).rowwise().sum();
    Mat dx = y.cwiseProduct(g - dots.replicate(1, g.cols()));
    t.accumulate(ia, dx);
  });
}

Var softmax_cross_entropy(Var logits, const std::vector<int>& target) {
  const Mat& x = logits.value();
  if (static_cast<Eigen::Index>(target.size()) != x.rows())
    throw DataError("softmax_cross_entropy: target count mismatch");
  if (!x.allFinite()) throw NumericError("softmax_cross_entropy: non-finite logits");
  Mat p(x.rows(), x.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int c = target[static_cast<std::size_t>(i)];
    if (c < 0 || c >= x.cols()) throw DataError("softmax_cross_entropy: class out of range");
    const double mx = x.row(i).maxCoeff();
    const double lse = mx + std::log((x.row(i).array() - mx).exp().sum());
    loss += lse - x(i, c);
    p.row(i) = (x.row(i).array() - lse).exp().matrix();
  }
  const double n = static_cast<double>(std::max<Eigen::Index>(1, x.rows()));
  const int ia = logits.id;
  return logits.tape->push(Mat::Constant(1, 1, loss / n), any_grad({logits}),
                           [ia, p, target, n](Tape& t, const Mat& g) {
                             Mat dx = p;
                             for (Eigen::Index i = 0; i < dx.rows(); ++i) dx(i, target[static_cast<std::size_t>(i)]) -= 1.0;
                             t.accumulate(ia, dx * (g(0, 0) / n));
                           });
}

Var bce_mean(Var probs, const Mat& targets) {
  const Mat& p = probs.value();
  check_same_shape(p, targets, "bce_mean");
  double loss = 0.0;
  Mat dx = Mat::Zero(p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const double raw = p(i, j);
      if (!std::isfinite(raw)) throw NumericError("bce_mean: non-finite probability");
      const double q = std::clamp(raw, kProbEps, 1.0 - kProbEps);
      const double y = targets(i, j);
      loss -= y * std::log(q) + (1.0 - y) * std::log(1.0 - q);
      // Clamped entries have zero derivative.
      if (raw > kProbEps && raw < 1.0 - kProbEps) dx(i, j) = -y / q + (1.0 - y) / (1.0 - q);
    }
  const double n = static_cast<double>(std::max<Eigen::Index>(1, p.rows()));
  const int ia = probs.id;
  return probs.tape->push(Mat::Constant(1, 1, loss / n), any_grad({probs}),
                          [ia, dx, n](Tape& t, const Mat& g) { t.accumulate(ia, dx * (g(0, 0) / n)); });
}

}  // namespace ad
}  // namespace ramer
