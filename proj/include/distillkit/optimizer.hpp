#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "distillkit/nn.hpp"

namespace distillkit {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

/// Bias-corrected adaptive-moment optimizer. Moment buffers are keyed by
/// parameter position, so one instance must stay with one parameter list.
class Adam {
public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// theta -= lr * m_hat / (sqrt(v_hat) + eps) for every parameter not in
  /// `frozen`. Frozen tensors and their moments are left untouched.
  void step(std::vector<Parameter> &params, const std::vector<Tensor> &grads,
            const std::set<std::string> &frozen);

  std::int64_t iterations() const { return t_; }
  const AdamConfig &config() const { return cfg_; }

private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

} // namespace distillkit
