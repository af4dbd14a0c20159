#pragma once

#include "d2d/autograd.hpp"

#include <map>
#include <string>
#include <vector>

namespace d2d {

// SGD with heavy-ball momentum: v <- mu v + g; p <- p - lr v.
class Sgd {
 public:
  Sgd(std::vector<Parameter*> params, double lr, double momentum);

  void step();
  void zero_grad();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  const std::map<std::string, Mat>& state() const { return velocity_; }
  void load_state(const std::map<std::string, Mat>& state);

 private:
  std::vector<Parameter*> params_;
  double lr_;
  double momentum_;
  std::map<std::string, Mat> velocity_;
};

class Adam {
 public:
  Adam(std::vector<Parameter*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void step();
  void zero_grad();
  void set_lr(double lr) { lr_ = lr; }

 private:
  std::vector<Parameter*> params_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Mat> m_, v_;
};

}  // namespace d2d
