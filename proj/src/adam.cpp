#include "dmmia/adam.hpp"

#include <cmath>

namespace dmmia {

Adam::Adam(std::vector<Tensor> params, const AdamConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  if (params_.empty()) throw ContractError("adam: empty parameter list");
  if (!(cfg_.lr > 0.0)) throw ContractError("adam: learning rate must be positive");
  if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0) {
    throw ContractError("adam: betas must lie in [0, 1)");
  }
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    if (!p.requires_grad()) {
      throw ContractError("adam: parameter does not require grad");
    }
    m_.push_back(Arr::Zero(p.size()));
    v_.push_back(Arr::Zero(p.size()));
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    const Arr g = p.grad_or_zeros();
    if (g.size() != p.size()) {
      throw ShapeError("adam: gradient size " + std::to_string(g.size()) +
                       " does not match parameter size " + std::to_string(p.size()));
    }
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.square();
    const Arr m_hat = m_[i] / c1;
    const Arr v_hat = v_[i] / c2;
    p.value() -= cfg_.lr * m_hat / (v_hat.sqrt() + cfg_.eps);
    check_finite("adam", p.value());
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

}  // namespace dmmia
