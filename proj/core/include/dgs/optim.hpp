// optim.hpp
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace dgs {

/**
 * @brief AdamW over a flat parameter vector, with bias correction and
 * decoupled weight decay. Decay is applied before the moment step (so the two
 * terms do not interact) and is scaled by the current learning rate; an
 * optional mask restricts decay to a subset of parameters.
 */
class AdamW {
 public:
  AdamW(std::size_t size, double beta1 = 0.9, double beta2 = 0.95, double eps = 1e-8);

  void update(std::vector<double>& params, const std::vector<double>& grads, double lr,
              double weight_decay = 0.0, const std::vector<std::uint8_t>* decay_mask = nullptr);

  std::int64_t steps_taken() const { return steps_taken_; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }

 private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, eps_;
  std::int64_t steps_taken_ = 0;
};

/// Scale grads in place so the global L2 norm is at most max_norm. Returns the
/// pre-clip norm.
double clip_global_norm(std::vector<double>& grads, double max_norm);

/// Cosine annealing from base_lr at step 0 to exactly 0 at step == steps.
double cosine_lr(double base_lr, int step_index, int steps);

}  // namespace dgs
