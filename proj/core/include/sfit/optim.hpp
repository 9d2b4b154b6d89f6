#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "sfit/nn.hpp"

namespace sfit::optim {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed parameter set.
class Adam {
 public:
  Adam(std::vector<nn::Parameter*> params, AdamOptions opts = {});

  void step(double lr);
  void zero_grad();
  long steps() const { return t_; }

 private:
  std::vector<nn::Parameter*> params_;
  AdamOptions opts_;
  std::vector<std::vector<float>> m_, v_;
  long t_ = 0;
};

/// Cosine decay from base_lr at step 0 to 0 at total_steps.
inline double cosine_lr(double base_lr, long step, long total_steps) {
  if (total_steps <= 0) return base_lr;
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total_steps));
}

}  // namespace sfit::optim
