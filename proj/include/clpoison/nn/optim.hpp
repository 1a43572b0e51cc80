#pragma once

#include "clpoison/nn/layers.hpp"

#include <vector>

namespace clpoison::nn {

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient,
/// matching the usual deep-learning update: v = mu*v + (g + wd*w); w -= lr*v.
class Sgd {
 public:
  Sgd(double lr, double momentum, double weight_decay)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  /// The parameter list must be the same (in order and shape) on every call.
  void step(const std::vector<Param*>& params);

 private:
  double lr_;
  double momentum_;
  double weight_decay_;
  std::vector<Matrix> velocity_;
};

/// Adam, used for the small convex probes where tuning SGD per feature scale is a nuisance.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(const std::vector<Param*>& params);

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

/// Half-cosine decay from base_lr at step 0 to 0 at step total.
double cosine_lr(double base_lr, int step, int total);

}  // namespace clpoison::nn
