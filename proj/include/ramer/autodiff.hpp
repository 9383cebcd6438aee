// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal tape-based reverse-mode differentiation over dense double matrices.
// Every model computation in ramer is expressed with the ops below so that
// any loss term can be gradient-checked against central finite differences.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

namespace ramer {

using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

/// A trainable matrix with its accumulated gradient.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Owns parameters with stable addresses, in registration order.
class ParameterStore {
 public:
  Parameter& add(std::string name, Mat init);

  std::deque<Parameter>& all() { return params_; }
  const std::deque<Parameter>& all() const { return params_; }
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::deque<Parameter> params_;
};

namespace ad {

class Tape;

/// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  bool valid() const { return tape != nullptr; }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat& grad_out)>;

  Var push(Mat value, bool requires_grad, Backward backward);
  Var constant(Mat value);
  Var param(Parameter& p);

  const Mat& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  /// Accumulate into the gradient of node `id` (no-op for constants).
  void accumulate(int id, const Mat& g);
  /// Gradient of the last backward() w.r.t. node `id`, zeros when untouched.
  Mat grad(int id) const;

  /// Seeds d(out)/d(out) = 1 for a 1x1 node and propagates to parameters.
  void backward(Var out);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;
};

// -- elementwise / linear algebra --------------------------------------------
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
Var transpose(Var a);
/// a (n x c) + row (1 x c) broadcast over rows.
Var add_row(Var a, Var row);
Var relu(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var square(Var a);
Var sum_all(Var a);
Var mean_all(Var a);
/// Identity forward, gradient multiplied by -rho on the way back.
Var grad_reverse(Var a, double rho);
/// Value passes through, no gradient flows back.
Var detach(Var a);

// -- shape ---------------------------------------------------------------------
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var gather_rows(Var a, const std::vector<int>& index);

// -- reductions over row groups ------------------------------------------------
/// One output row per group: elementwise max over the group's rows.
Var group_max_rows(Var a, const std::vector<std::vector<int>>& groups);
/// One output row per group: mean over the group's rows.
Var group_mean_rows(Var a, const std::vector<std::vector<int>>& groups);
/// Elementwise max over same-shaped operands.
Var elementwise_max(const std::vector<Var>& parts);

// -- row geometry ---------------------------------------------------------------
Var l2_normalize_rows(Var a);
/// n x 1 column of per-row inner products.
Var row_dot(Var a, Var b);
/// n x 1 column of per-row Euclidean norms.
Var row_norm(Var a);

Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-5);

/// Scaled dot-product attention restricted to row groups.
///
/// Rows of q/k/v are aligned. Each query attends only to keys in its own group
/// whose key_mask entry is non-zero. Columns are split evenly across `heads`.
/// A query whose group has no attendable key produces a zero row.
Var grouped_attention(Var q, Var k, Var v, const std::vector<std::vector<int>>& groups,
                      const std::vector<std::uint8_t>& key_mask, int heads);

/// Attention probabilities for one head, for inspection: entry (i, j) is the
/// weight query row i assigns to key row j (zero outside the query's group).
Mat attention_weights(const Mat& q, const Mat& k, const std::vector<std::vector<int>>& groups,
                      const std::vector<std::uint8_t>& key_mask, int heads, int head);

// -- losses ------------------------------------------------------------------------
inline constexpr double kProbEps = 1e-7;

/// Row-wise softmax.
Var softmax_rows(Var logits);
/// Mean over rows of -log softmax(logits)[row, target[row]].
Var softmax_cross_entropy(Var logits, const std::vector<int>& target);
/// Mean over rows of the label-summed binary cross-entropy; probabilities are
/// clamped to [kProbEps, 1 - kProbEps].
Var bce_mean(Var probs, const Mat& targets);

}  // namespace ad
}  // namespace ramer
