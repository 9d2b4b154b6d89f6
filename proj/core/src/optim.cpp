#include "sfit/optim.hpp"

namespace sfit::optim {

Adam::Adam(std::vector<nn::Parameter*> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
  for (auto* p : params_) {
    m_.emplace_back(p->value.size(), 0.0f);
    v_.emplace_back(p->value.size(), 0.0f);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  const auto b1 = static_cast<float>(opts_.beta1), b2 = static_cast<float>(opts_.beta2);
  const auto step_size = static_cast<float>(lr / bc1);
  const auto inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const auto eps = static_cast<float>(opts_.eps);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& w = params_[k]->value;
    const auto& g = params_[k]->grad;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      w[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

}  // namespace sfit::optim
