#include "clpoison/nn/optim.hpp"

#include <cmath>
#include <numbers>

namespace clpoison::nn {

void Sgd::step(const std::vector<Param*>& params) {
  if (velocity_.empty()) {
    for (const auto* p : params) velocity_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    Matrix g = p.grad;
    if (weight_decay_ != 0.0) g += weight_decay_ * p.value;
    velocity_[i] = momentum_ * velocity_[i] + g;
    p.value -= lr_ * velocity_[i];
  }
}

void Adam::step(const std::vector<Param*>& params) {
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseAbs2();
    p.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

double cosine_lr(double base_lr, int step, int total) {
  if (total <= 0) return base_lr;
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * step / total));
}

}  // namespace clpoison::nn
