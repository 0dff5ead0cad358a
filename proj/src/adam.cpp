// SPDX-License-Identifier: Apache-2.0
#include "dkto/adam.hpp"

#include <cmath>
#include <string>

#include "dkto/errors.hpp"

namespace dkto {

AdamState::AdamState(AdamConfig cfg, const std::vector<std::size_t>& tensor_sizes) : cfg_(cfg) {
  if (!(cfg.lr > 0) || !(cfg.beta1 >= 0 && cfg.beta1 < 1) || !(cfg.beta2 >= 0 && cfg.beta2 < 1) || !(cfg.eps > 0))
    throw ConfigError("invalid Adam hyperparameters");
  for (std::size_t n : tensor_sizes) {
    m_.emplace_back(n, 0.0);
    v_.emplace_back(n, 0.0);
  }
}

void AdamState::step(std::span<const TensorView> params, std::span<const ConstTensorView> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw UsageError("Adam: tensor count does not match optimizer state");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (params[i].data.size() != m_[i].size() || grads[i].data.size() != m_[i].size())
      throw UsageError("Adam: shape mismatch for tensor '" + params[i].name + "'");
    for (std::size_t j = 0; j < grads[i].data.size(); ++j)
      if (!std::isfinite(grads[i].data[j]))
        throw NumericalError("non-finite gradient in tensor '" + grads[i].name + "' at index " + std::to_string(j));
  }

  ++step_count_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& m = m_[i];
    auto& v = v_[i];
    auto p = params[i].data;
    auto g = grads[i].data;
    for (std::size_t j = 0; j < g.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p[j] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

}  // namespace dkto
