#ifndef DMMIA_ADAM_HPP
#define DMMIA_ADAM_HPP

#include <vector>

#include "dmmia/tensor.hpp"

namespace dmmia {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a fixed set of leaf tensors. Per-parameter first
// and second moment estimates m, v match the parameter shapes; `t` is the
// shared step counter. An absent gradient counts as zero.
class Adam {
 public:
  Adam(std::vector<Tensor> params, const AdamConfig& cfg);

  //   t <- t + 1
  //   m <- b1 m + (1-b1) g          v <- b2 v + (1-b2) g^2
  //   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
  void step();

  // Clears the gradients of all registered parameters.
  void zero_grad();

  long long t() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor> params_;
  std::vector<Arr> m_, v_;
  AdamConfig cfg_;
  long long t_ = 0;
};

}  // namespace dmmia

#endif
