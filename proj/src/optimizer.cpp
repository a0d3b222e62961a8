#include "distillkit/optimizer.hpp"

#include <cmath>

#include "distillkit/error.hpp"

namespace distillkit {

void Adam::step(std::vector<Parameter> &params, const std::vector<Tensor> &grads,
                const std::set<std::string> &frozen) {
  if (grads.size() != params.size())
    throw InvalidArgumentError("Adam::step: gradient count does not match parameter count");
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
  } else if (m_.size() != params.size()) {
    throw InvalidStateError("Adam::step: parameter list changed between steps");
  }
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));

  for (std::size_t p = 0; p < params.size(); ++p) {
    if (frozen.contains(params[p].name)) continue;
    auto &value = params[p].value;
    const auto &g = grads[p];
    if (g.shape() != value.shape())
      throw InvalidArgumentError("Adam::step: gradient shape mismatch for " + params[p].name);
    auto &m = m_[p];
    auto &v = v_[p];
    if (m.empty()) {
      m.assign(static_cast<std::size_t>(value.size()), 0.0);
      v.assign(static_cast<std::size_t>(value.size()), 0.0);
    }
    for (std::int64_t i = 0; i < value.size(); ++i) {
      const auto k = static_cast<std::size_t>(i);
      const double gi = g[i];
      m[k] = b1 * m[k] + (1.0 - b1) * gi;
      v[k] = b2 * v[k] + (1.0 - b2) * gi * gi;
      const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.epsilon);
      value[i] = static_cast<float>(static_cast<double>(value[i]) - cfg_.learning_rate * update);
    }
  }
}

} // namespace distillkit
