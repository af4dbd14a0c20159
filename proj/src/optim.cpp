#include "d2d/optim.hpp"

#include "d2d/util.hpp"

#include <cmath>

namespace d2d {

Sgd::Sgd(std::vector<Parameter*> params, double lr, double momentum)
    : params_(std::move(params)), lr_(lr), momentum_(momentum) {
  if (!(lr > 0.0)) throw ConfigError("Sgd: learning rate must be > 0");
  for (auto* p : params_) velocity_[p->name] = Mat::Zero(p->value.rows(), p->value.cols());
}

void Sgd::step() {
  for (auto* p : params_) {
    Mat& v = velocity_[p->name];
    v = momentum_ * v + p->grad;
    p->value -= lr_ * v;
  }
}

void Sgd::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

void Sgd::load_state(const std::map<std::string, Mat>& state) {
  for (auto* p : params_) {
    auto it = state.find(p->name);
    if (it == state.end()) continue;
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
      throw LoadError("optimizer state shape mismatch for " + p->name);
    velocity_[p->name] = it->second;
  }
}

Adam::Adam(std::vector<Parameter*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto* p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto* p = params_[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p->grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p->grad.cwiseProduct(p->grad);
    p->value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

void Adam::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

}  // namespace d2d
