#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// Every value in the model is a 2-D matrix (tokens x features). A Var owns a
// node in a dynamically built graph; calling backward() on a 1x1 Var walks the
// graph in reverse topological order and accumulates gradients into the
// Parameter objects that were read during the forward pass.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace d2d {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

struct Node {
  Mat value;
  Mat grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  Parameter* param = nullptr;
  bool requires_grad = false;

  void accumulate(const Mat& g) {
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Var constant(Mat m);
  static Var param(Parameter& p);

  const Mat& value() const { return node_->value; }
  const Mat& grad() const { return node_->grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return node_ != nullptr; }

  // Seeds d(self)/d(self) = 1; self must be 1x1.
  void backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph construction on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

namespace ops {

Var matmul(const Var& a, const Var& b);
// a * b^T
Var matmul_nt(const Var& a, const Var& b);
// x W + b (b broadcast over rows); bias may be undefined.
Var linear(const Var& x, const Var& w, const Var& bias);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
// a + row, with row broadcast over a's rows.
Var add_row(const Var& a, const Var& row);
Var scale(const Var& a, double s);
Var relu(const Var& x);
Var gelu(const Var& x);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var softmax_rows(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(const Var& x, Eigen::Index start, Eigen::Index count);
Var row(const Var& x, Eigen::Index r);
Var mean_rows(const Var& x);
Var sum(const Var& x);

// Output row r is the concatenation of x's rows index[r*group .. r*group+group).
// group == 1 is a plain row gather.
Var gather_rows(const Var& x, const std::vector<int>& index, int group);

// sum_k beta(0,k) * mats[k]
Var weighted_sum(const std::vector<Var>& mats, const Var& beta);

// Multi-head scaled dot-product self-attention. qkv has 3*d columns laid
// out as [Q | K | V]; each of Q, K, V splits into `heads` equal column blocks.
Var multi_head_attention(const Var& qkv, int heads);

// Softmax cross-entropy of a 1 x n logit row against a class index.
Var cross_entropy(const Var& logits, int label);
// Sum over classes of binary cross-entropy with logits, targets in {0,1}.
Var bce_with_logits(const Var& logits, const RowVec& targets);
// sum |a - target|
Var l1_distance(const Var& a, const Mat& target);

}  // namespace ops
}  // namespace d2d
