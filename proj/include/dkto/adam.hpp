// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dkto/nn.hpp"

namespace dkto {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction over a fixed list of named tensors.
class AdamState {
 public:
  AdamState(AdamConfig cfg, const std::vector<std::size_t>& tensor_sizes);

  // Checks every gradient for finiteness before touching any parameter;
  // a NaN/Inf raises NumericalError naming the tensor and leaves the
  // parameters and moments untouched.
  void step(std::span<const TensorView> params, std::span<const ConstTensorView> grads);

  std::int64_t step_count() const { return step_count_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const std::vector<std::vector<double>>& first_moment() const { return m_; }
  const std::vector<std::vector<double>>& second_moment() const { return v_; }

 private:
  AdamConfig cfg_;
  std::int64_t step_count_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace dkto
