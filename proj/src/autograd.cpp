#include "d2d/autograd.hpp"

#include "d2d/util.hpp"

#include <cmath>
#include <unordered_set>

namespace d2d {

namespace {

thread_local bool g_grad_enabled = true;

Var make_result(Mat value, std::initializer_list<const Var*> inputs,
                std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const Var* v : inputs)
      if (v->defined() && v->requires_grad()) any = true;
    if (any) {
      n->requires_grad = true;
      for (const Var* v : inputs) n->parents.push_back(v->node());
      n->backward_fn = std::move(fn);
    }
  }
  return Var(std::move(n));
}

Var make_result(Mat value, const std::vector<Var>& inputs, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const Var& v : inputs)
      if (v.requires_grad()) any = true;
    if (any) {
      n->requires_grad = true;
      for (const Var& v : inputs) n->parents.push_back(v.node());
      n->backward_fn = std::move(fn);
    }
  }
  return Var(std::move(n));
}

inline bool wants(const Node& self, std::size_t i) {
  return self.parents[i] && self.parents[i]->requires_grad;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

std::string dims(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

Var Var::constant(Mat m) {
  auto n = std::make_shared<Node>();
  n->value = std::move(m);
  return Var(std::move(n));
}

Var Var::param(Parameter& p) {
  auto n = std::make_shared<Node>();
  n->value = p.value;
  if (g_grad_enabled) {
    n->requires_grad = true;
    n->param = &p;
  }
  return Var(std::move(n));
}

double Var::item() const {
  if (node_->value.size() != 1) throw ShapeError("item() on non-scalar " + dims(node_->value));
  return node_->value(0, 0);
}

void Var::backward() const {
  if (node_->value.size() != 1) throw ShapeError("backward() on non-scalar " + dims(node_->value));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad = Mat::Ones(1, 1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->grad.size() == 0) continue;
    if (n->backward_fn) n->backward_fn(*n);
    if (n->param) {
      if (n->param->grad.size() == 0) n->param->zero_grad();
      n->param->grad += n->grad;
    }
  }
}

namespace ops {

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), "matmul: " + dims(a.value()) + " * " + dims(b.value()));
  return make_result(a.value() * b.value(), {&a, &b}, [](Node& self) {
    const Mat& A = self.parents[0]->value;
    const Mat& B = self.parents[1]->value;
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad * B.transpose());
    if (wants(self, 1)) self.parents[1]->accumulate(A.transpose() * self.grad);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require(a.cols() == b.cols(), "matmul_nt: " + dims(a.value()) + " * T(" + dims(b.value()) + ")");
  return make_result(a.value() * b.value().transpose(), {&a, &b}, [](Node& self) {
    const Mat& A = self.parents[0]->value;
    const Mat& B = self.parents[1]->value;
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad * B);
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad.transpose() * A);
  });
}

Var linear(const Var& x, const Var& w, const Var& bias) {
  require(x.cols() == w.rows(), "linear: " + dims(x.value()) + " * " + dims(w.value()));
  Mat out = x.value() * w.value();
  if (bias.defined()) {
    require(bias.rows() == 1 && bias.cols() == w.cols(), "linear bias: " + dims(bias.value()));
    out.rowwise() += bias.value().row(0);
  }
  if (!bias.defined()) {
    return make_result(std::move(out), {&x, &w}, [](Node& self) {
      const Mat& X = self.parents[0]->value;
      const Mat& W = self.parents[1]->value;
      if (wants(self, 0)) self.parents[0]->accumulate(self.grad * W.transpose());
      if (wants(self, 1)) self.parents[1]->accumulate(X.transpose() * self.grad);
    });
  }
  return make_result(std::move(out), {&x, &w, &bias}, [](Node& self) {
    const Mat& X = self.parents[0]->value;
    const Mat& W = self.parents[1]->value;
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad * W.transpose());
    if (wants(self, 1)) self.parents[1]->accumulate(X.transpose() * self.grad);
    if (wants(self, 2)) self.parents[2]->accumulate(self.grad.colwise().sum());
  });
}

Var add(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          "add: " + dims(a.value()) + " + " + dims(b.value()));
  return make_result(a.value() + b.value(), {&a, &b}, [](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          "sub: " + dims(a.value()) + " - " + dims(b.value()));
  return make_result(a.value() - b.value(), {&a, &b}, [](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(-self.grad);
  });
}

Var add_row(const Var& a, const Var& r) {
  require(r.rows() == 1 && r.cols() == a.cols(), "add_row: " + dims(a.value()) + " + " + dims(r.value()));
  Mat out = a.value();
  out.rowwise() += r.value().row(0);
  return make_result(std::move(out), {&a, &r}, [](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad.colwise().sum());
  });
}

Var scale(const Var& a, double s) {
  return make_result(a.value() * s, {&a}, [s](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad * s);
  });
}

Var relu(const Var& x) {
  return make_result(x.value().cwiseMax(0.0), {&x}, [](Node& self) {
    const Mat& X = self.parents[0]->value;
    self.parents[0]->accumulate((X.array() > 0.0).select(self.grad, 0.0));
  });
}

Var gelu(const Var& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  Mat out = x.value().unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
  return make_result(std::move(out), {&x}, [](Node& self) {
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    const Mat& X = self.parents[0]->value;
    Mat d = X.unaryExpr([](double v) {
      return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
    });
    self.parents[0]->accumulate(self.grad.cwiseProduct(d));
  });
}

Var sigmoid(const Var& x) {
  Mat out = x.value().unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  return make_result(std::move(out), {&x}, [](Node& self) {
    Mat s = self.value;
    self.parents[0]->accumulate(self.grad.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
  });
}

Var tanh(const Var& x) {
  Mat out = x.value().array().tanh().matrix();
  return make_result(std::move(out), {&x}, [](Node& self) {
    const Mat& y = self.value;
    self.parents[0]->accumulate(self.grad.cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

namespace {
Mat softmax_rows_value(const Mat& x) {
  Mat y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}
}  // namespace

Var softmax_rows(const Var& x) {
  return make_result(softmax_rows_value(x.value()), {&x}, [](Node& self) {
    const Mat& y = self.value;
    Mat gy = self.grad.cwiseProduct(y);
    Eigen::VectorXd s = gy.rowwise().sum();
    Mat dx = gy;
    dx -= (y.array().colwise() * s.array()).matrix();
    self.parents[0]->accumulate(dx);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Mat& X = x.value();
  const Eigen::Index n = X.cols();
  require(gamma.rows() == 1 && gamma.cols() == n && beta.rows() == 1 && beta.cols() == n,
          "layer_norm: gamma/beta must be 1x" + std::to_string(n));
  Mat xhat(X.rows(), n);
  Eigen::VectorXd inv_std(X.rows());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const double mu = X.row(r).mean();
    const double var = (X.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (X.row(r).array() - mu) * inv_std(r);
  }
  Mat out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  return make_result(std::move(out), {&x, &gamma, &beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       const Mat& g = self.grad;
                       const auto& G = self.parents[1]->value;
                       if (wants(self, 0)) {
                         const double nn = static_cast<double>(g.cols());
                         Mat dxhat = (g.array().rowwise() * G.row(0).array()).matrix();
                         Mat dx(g.rows(), g.cols());
                         for (Eigen::Index r = 0; r < g.rows(); ++r) {
                           const double s1 = dxhat.row(r).sum();
                           const double s2 = dxhat.row(r).dot(xhat.row(r));
                           dx.row(r) = (inv_std(r) / nn) *
                                       (nn * dxhat.row(r).array() - s1 - xhat.row(r).array() * s2);
                         }
                         self.parents[0]->accumulate(dx);
                       }
                       if (wants(self, 1)) self.parents[1]->accumulate(g.cwiseProduct(xhat).colwise().sum());
                       if (wants(self, 2)) self.parents[2]->accumulate(g.colwise().sum());
                     });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const Eigen::Index c = parts[0].cols();
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    require(p.cols() == c, "concat_rows: column mismatch " + dims(p.value()));
    r += p.rows();
  }
  Mat out(r, c);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    out.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  return make_result(std::move(out), parts, [offsets](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      if (!wants(self, i)) continue;
      self.parents[i]->accumulate(self.grad.middleRows(offsets[i], self.parents[i]->value.rows()));
    }
  });
}

Var slice_rows(const Var& x, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= x.rows(),
          "slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) + ") of " +
              dims(x.value()));
  return make_result(x.value().middleRows(start, count), {&x}, [start, count](Node& self) {
    Mat g = Mat::Zero(self.parents[0]->value.rows(), self.parents[0]->value.cols());
    g.middleRows(start, count) = self.grad;
    self.parents[0]->accumulate(g);
  });
}

Var row(const Var& x, Eigen::Index r) { return slice_rows(x, r, 1); }

Var mean_rows(const Var& x) {
  require(x.rows() > 0, "mean_rows: empty input");
  return make_result(x.value().colwise().mean(), {&x}, [](Node& self) {
    const auto n = self.parents[0]->value.rows();
    Mat g = self.grad.replicate(n, 1) / static_cast<double>(n);
    self.parents[0]->accumulate(g);
  });
}

Var sum(const Var& x) {
  Mat out(1, 1);
  out(0, 0) = x.value().sum();
  return make_result(std::move(out), {&x}, [](Node& self) {
    const Mat& X = self.parents[0]->value;
    self.parents[0]->accumulate(Mat::Constant(X.rows(), X.cols(), self.grad(0, 0)));
  });
}

Var gather_rows(const Var& x, const std::vector<int>& index, int group) {
  require(group >= 1 && index.size() % static_cast<std::size_t>(group) == 0,
          "gather_rows: index length not a multiple of group");
  const Eigen::Index c = x.cols();
  const Eigen::Index out_rows = static_cast<Eigen::Index>(index.size()) / group;
  Mat out(out_rows, c * group);
  for (Eigen::Index r = 0; r < out_rows; ++r) {
    for (int j = 0; j < group; ++j) {
      const int src = index[static_cast<std::size_t>(r * group + j)];
      require(src >= 0 && src < x.rows(), "gather_rows: index out of range");
      out.block(r, j * c, 1, c) = x.value().row(src);
    }
  }
  return make_result(std::move(out), {&x}, [index, group](Node& self) {
    const Mat& X = self.parents[0]->value;
    const Eigen::Index c = X.cols();
    Mat g = Mat::Zero(X.rows(), c);
    const Eigen::Index out_rows = self.grad.rows();
    for (Eigen::Index r = 0; r < out_rows; ++r)
      for (int j = 0; j < group; ++j)
        g.row(index[static_cast<std::size_t>(r * group + j)]) += self.grad.block(r, j * c, 1, c);
    self.parents[0]->accumulate(g);
  });
}

Var weighted_sum(const std::vector<Var>& mats, const Var& beta) {
  require(!mats.empty(), "weighted_sum: no inputs");
  require(beta.rows() == 1 && beta.cols() == static_cast<Eigen::Index>(mats.size()),
          "weighted_sum: beta " + dims(beta.value()) + " for " + std::to_string(mats.size()) +
              " branches");
  const auto& b = beta.value();
  Mat out = Mat::Zero(mats[0].rows(), mats[0].cols());
  for (std::size_t k = 0; k < mats.size(); ++k) {
    require(mats[k].rows() == out.rows() && mats[k].cols() == out.cols(),
            "weighted_sum: branch shape mismatch " + dims(mats[k].value()));
    out += b(0, static_cast<Eigen::Index>(k)) * mats[k].value();
  }
  std::vector<Var> inputs = mats;
  inputs.push_back(beta);
  return make_result(std::move(out), inputs, [](Node& self) {
    const std::size_t K = self.parents.size() - 1;
    const Mat& B = self.parents[K]->value;
    Mat db(1, static_cast<Eigen::Index>(K));
    for (std::size_t k = 0; k < K; ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      if (wants(self, k)) self.parents[k]->accumulate(B(0, kk) * self.grad);
      db(0, kk) = self.grad.cwiseProduct(self.parents[k]->value).sum();
    }
    if (wants(self, K)) self.parents[K]->accumulate(db);
  });
}

Var multi_head_attention(const Var& qkv, int heads) {
  const Eigen::Index n = qkv.rows();
  require(qkv.cols() % 3 == 0, "attention: qkv width " + std::to_string(qkv.cols()) + " not 3*d");
  const Eigen::Index d = qkv.cols() / 3;
  require(heads >= 1 && d % heads == 0,
          "attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  const Eigen::Index dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const Mat& X = qkv.value();
  Mat out(n, d);
  std::vector<Mat> probs(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const auto Q = X.middleCols(h * dh, dh);
    const auto K = X.middleCols(d + h * dh, dh);
    const auto V = X.middleCols(2 * d + h * dh, dh);
    Mat S = (Q * K.transpose()) * sc;
    Mat P = softmax_rows_value(S);
    out.middleCols(h * dh, dh) = P * V;
    probs[static_cast<std::size_t>(h)] = std::move(P);
  }
  return make_result(std::move(out), {&qkv}, [probs = std::move(probs), heads, d, dh, sc](Node& self) {
    const Mat& X = self.parents[0]->value;
    Mat g = Mat::Zero(X.rows(), X.cols());
    for (int h = 0; h < heads; ++h) {
      const Mat& P = probs[static_cast<std::size_t>(h)];
      const auto Q = X.middleCols(h * dh, dh);
      const auto K = X.middleCols(d + h * dh, dh);
      const auto V = X.middleCols(2 * d + h * dh, dh);
      const auto dO = self.grad.middleCols(h * dh, dh);
      Mat dP = dO * V.transpose();
      Eigen::VectorXd s = dP.cwiseProduct(P).rowwise().sum();
      Mat dS = P.cwiseProduct(dP);
      dS -= (P.array().colwise() * s.array()).matrix();
      dS *= sc;
      g.middleCols(h * dh, dh) += dS * K;
      g.middleCols(d + h * dh, dh) += dS.transpose() * Q;
      g.middleCols(2 * d + h * dh, dh) += P.transpose() * dO;
    }
    self.parents[0]->accumulate(g);
  });
}

Var cross_entropy(const Var& logits, int label) {
  require(logits.rows() == 1, "cross_entropy: logits must be a single row");
  if (label < 0 || label >= logits.cols())
    throw InvalidInput("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                       std::to_string(logits.cols()) + ")");
  const auto& z = logits.value();
  const double m = z.maxCoeff();
  const double lse = m + std::log((z.array() - m).exp().sum());
  Mat out(1, 1);
  out(0, 0) = lse - z(0, label);
  return make_result(std::move(out), {&logits}, [label, lse](Node& self) {
    Mat p = (self.parents[0]->value.array() - lse).exp().matrix();
    p(0, label) -= 1.0;
    self.parents[0]->accumulate(p * self.grad(0, 0));
  });
}

Var bce_with_logits(const Var& logits, const RowVec& targets) {
  require(logits.rows() == 1 && logits.cols() == targets.cols(),
          "bce_with_logits: logits " + dims(logits.value()) + " vs " + std::to_string(targets.cols()) +
              " targets");
  const auto& z = logits.value();
  double total = 0.0;
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const double v = z(0, c);
    // softplus(v) - y v, computed stably
    const double sp = v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    total += sp - targets(c) * v;
  }
  Mat out(1, 1);
  out(0, 0) = total;
  return make_result(std::move(out), {&logits}, [targets](Node& self) {
    const Mat& Z = self.parents[0]->value;
    Mat g(1, Z.cols());
    for (Eigen::Index c = 0; c < Z.cols(); ++c) g(0, c) = 1.0 / (1.0 + std::exp(-Z(0, c))) - targets(c);
    self.parents[0]->accumulate(g * self.grad(0, 0));
  });
}

Var l1_distance(const Var& a, const Mat& target) {
  require(a.rows() == target.rows() && a.cols() == target.cols(),
          "l1_distance: " + dims(a.value()) + " vs target " + dims(target));
  Mat diff = a.value() - target;
  Mat out(1, 1);
  out(0, 0) = diff.cwiseAbs().sum();
  Mat sign = diff.unaryExpr([](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
  return make_result(std::move(out), {&a}, [sign = std::move(sign)](Node& self) {
    self.parents[0]->accumulate(sign * self.grad(0, 0));
  });
}

}  // namespace ops
}  // namespace d2d
