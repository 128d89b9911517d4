#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// double matrices. A Tape records one forward pass; Var is a cheap handle
// into it. Frozen weights enter the tape as constants and never receive
// gradients; trainable Parameters accumulate into Parameter::grad.

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace anprompt {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  bool trainable = false;

  Parameter() = default;
  Parameter(std::string n, Mat v, bool is_trainable)
      : name(std::move(n)), value(std::move(v)), trainable(is_trainable) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

namespace ag {

class Tape;

class Var {
 public:
  Var() = default;

  [[nodiscard]] const Mat& value() const;
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
  [[nodiscard]] bool requires_grad() const;
  [[nodiscard]] bool valid() const { return tape_ != nullptr; }
  [[nodiscard]] Tape* tape() const { return tape_; }
  [[nodiscard]] int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* t, int i) : tape_(t), id_(i) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Owned constant; no gradient.
  Var constant(Mat value);
  /// Borrowed constant; `value` must outlive the tape.
  Var constant_ref(const Mat& value);
  /// Differentiable leaf whose gradient is read back with grad().
  Var leaf(Mat value);
  /// Bind a Parameter. Trainable parameters accumulate into p.grad during
  /// backward(); frozen ones behave as borrowed constants.
  Var param(Parameter& p);
  Var param(const Parameter& p) { return constant_ref(p.value); }

  Var push(Mat value, bool requires_grad, Backward backward);

  /// Seed d(root)/d(root) = 1 for a 1x1 root and propagate.
  void backward(Var root);

  [[nodiscard]] const Mat& value(int id) const;
  [[nodiscard]] bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
  /// Gradient of the last backward() root with respect to `v`; zeros if none flowed.
  [[nodiscard]] Mat grad(Var v) const;

  void accumulate(int id, const Mat& g);
  [[nodiscard]] size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat owned;
    const Mat* external = nullptr;
    Mat grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    Backward backward;
  };
  std::deque<Node> nodes_;
};

// Linear algebra
Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// Adds a 1xC row to every row of a.
Var add_row(Var a, Var row);
/// x * W + b with W (in, out) and b (1, out).
Var affine(Var x, Var w, Var b);

// Shape
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var concat_rows(std::span<const Var> parts);
/// Row i of the result is a.row(index[i]).
Var gather_rows(Var a, std::span<const int> index);
/// Gathers a(i, index[i]) into an (n, 1) column.
Var pick(Var a, std::span<const int> index);

// Nonlinearities and normalisation
Var gelu(Var x);
Var abs(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var softmax_rows(Var x);
Var log_softmax_rows(Var x);
/// Row-wise L2 normalisation. Throws NumericError on a zero row.
Var l2_normalize_rows(Var x);
/// Fused multi-head self-attention core: input is (n, 3C) packed [Q | K | V],
/// output is (n, C). Attention is bidirectional.
Var attention(Var qkv, int num_heads);

// Reductions
Var sum(Var a);
Var mean(Var a);
/// (n, C) -> (n, 1)
Var row_sum(Var a);
/// (n, C) -> (1, C)
Var mean_rows(Var a);

}  // namespace ag
}  // namespace anprompt
