// optim.cpp
#include "dgs/optim.hpp"

#include "dgs/error.hpp"

#include <cmath>

namespace dgs {

AdamW::AdamW(std::size_t size, double beta1, double beta2, double eps)
    : m_(size, 0.0), v_(size, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamW::update(std::vector<double>& params, const std::vector<double>& grads, double lr,
                   double weight_decay, const std::vector<std::uint8_t>* decay_mask) {
  require(params.size() == m_.size(), ErrorCode::invalid_input,
          "optimizer state size does not match the parameter vector");
  require(grads.size() == m_.size(), ErrorCode::invalid_input,
          "gradient size does not match the parameter vector");
  require(decay_mask == nullptr || decay_mask->size() == m_.size(), ErrorCode::invalid_input,
          "decay mask size does not match the parameter vector");

  ++steps_taken_;
  const double bias1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_taken_));
  const double bias2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_taken_));

  for (std::size_t i = 0; i < params.size(); ++i) {
    if (weight_decay != 0.0 && (decay_mask == nullptr || (*decay_mask)[i])) {
      params[i] -= lr * weight_decay * params[i];
    }
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
    const double m_hat = m_[i] / bias1;
    const double v_hat = v_[i] / bias2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
  }
}

double clip_global_norm(std::vector<double>& grads, double max_norm) {
  double sum_sq = 0.0;
  for (double g : grads) sum_sq += g * g;
  const double norm = std::sqrt(sum_sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (double& g : grads) g *= scale;
  }
  return norm;
}

double cosine_lr(double base_lr, int step_index, int steps) {
  if (steps <= 0) return base_lr;
  if (step_index >= steps) return 0.0;
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step_index) /
                                         static_cast<double>(steps)));
}

}  // namespace dgs
